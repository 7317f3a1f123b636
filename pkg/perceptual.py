"""Frozen VGG16 feature pyramid and Gram-matrix style distance.

Taps sit on the last activation of each of the first four conv stages
(relu1_2, relu2_2, relu3_3, relu4_3). Gram matrices are normalised by C*H*W so
the style term does not scale with resolution.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import torch
import torch.nn as nn
from torchvision.models.vgg import cfgs, make_layers

from config import PerceptualSettings
from painter_core import DataError, ShapeError, check_image_tensor

logger = logging.getLogger(__name__)

VGG16_CONFIG = cfgs["D"]
TAP_TAGS: Tuple[str, ...] = ("relu1_2", "relu2_2", "relu3_3", "relu4_3")
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class FeaturePyramid:
    maps: Tuple[torch.Tensor, ...]
    tags: Tuple[str, ...] = TAP_TAGS

    def __len__(self) -> int:
        return len(self.maps)

    def __iter__(self):
        return iter(self.maps)


def _scaled_config(divisor: int) -> List:
    return [v if v == "M" else max(1, v // divisor) for v in VGG16_CONFIG]


def _tap_indices(features: nn.Sequential, n_taps: int) -> List[int]:
    """Index of the activation right before each of the first n_taps max-pools."""
    taps = []
    for i, layer in enumerate(features):
        if isinstance(layer, nn.MaxPool2d):
            taps.append(i - 1)
            if len(taps) == n_taps:
                break
    return taps


class PerceptualBackbone(nn.Module):
    """VGG16 `features` truncated after relu4_3. Never trained."""

    def __init__(self, vgg_config: List):
        super().__init__()
        full = make_layers(vgg_config, batch_norm=False)
        self.tap_indices = _tap_indices(full, len(TAP_TAGS))
        self.features = nn.Sequential(*list(full)[: self.tap_indices[-1] + 1])
        self.stage_widths = tuple(v for v in vgg_config if v != "M")
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))

    @classmethod
    def from_settings(cls, settings: PerceptualSettings, rng: torch.Generator,
                      dtype: torch.dtype = torch.float32) -> "PerceptualBackbone":
        """Load `settings.weights`, or build the narrow backbone with weights drawn from `rng`."""
        if settings.weights:
            backbone = cls(VGG16_CONFIG)
            backbone.load_weights(settings.weights)
        else:
            backbone = cls(_scaled_config(settings.width_divisor))
            backbone.randomize(rng)
            logger.info(f"Using seeded test backbone (widths / {settings.width_divisor})")
        return backbone.to(dtype).freeze()

    def randomize(self, rng: torch.Generator) -> None:
        with torch.no_grad():
            for layer in self.features:
                if isinstance(layer, nn.Conv2d):
                    fan_in = layer.in_channels * layer.kernel_size[0] * layer.kernel_size[1]
                    layer.weight.copy_(torch.randn(layer.weight.shape, generator=rng) * (2.0 / fan_in) ** 0.5)
                    layer.bias.zero_()

    def load_weights(self, path: str) -> None:
        """Load a torchvision vgg16 state dict (with or without `features.` prefix)."""
        path = Path(path)
        if not path.is_file():
            raise DataError(f"perceptual backbone weights not found: {path}")
        state = torch.load(path, map_location="cpu")
        own = set(self.features.state_dict())
        filtered = {}
        for key, value in state.items():
            key = key.removeprefix("features.")
            if key in own:
                filtered[key] = value
        missing = own - set(filtered)
        if missing:
            raise DataError(f"backbone weights {path} lack {len(missing)} tensors, e.g. {sorted(missing)[0]}")
        self.features.load_state_dict(filtered)
        logger.info(f"Loaded perceptual backbone weights from {path}")

    def freeze(self) -> "PerceptualBackbone":
        for p in self.parameters():
            p.requires_grad_(False)
        return self.eval()

    def train(self, mode: bool = True) -> "PerceptualBackbone":
        # frozen: always evaluation behaviour
        return super().train(False)

    def forward(self, img: torch.Tensor) -> FeaturePyramid:
        h = ((img + 1.0) / 2.0 - self.mean) / self.std
        maps = []
        for i, layer in enumerate(self.features):
            h = layer(h)
            if i in self.tap_indices:
                maps.append(h)
        return FeaturePyramid(tuple(maps))


def extract_features(backbone: PerceptualBackbone, img: torch.Tensor) -> FeaturePyramid:
    check_image_tensor(img, 1)
    return backbone(img)


def gram(features: torch.Tensor) -> torch.Tensor:
    """(B, C, H, W) -> (B, C, C) Gram matrices normalised by C*H*W."""
    if features.dim() != 4:
        raise ShapeError(f"gram expects a rank-4 feature map, got rank {features.dim()}")
    if not torch.isfinite(features).all():
        raise ShapeError("gram input contains non-finite values")
    batch, channels, height, width = features.shape
    flat = features.reshape(batch, channels, height * width)
    return torch.bmm(flat, flat.transpose(1, 2)) / (channels * height * width)


def style_distance_from_pyramids(a: FeaturePyramid, b: FeaturePyramid) -> torch.Tensor:
    if a.maps[0].shape[0] != b.maps[0].shape[0]:
        raise ShapeError(f"batch mismatch: {a.maps[0].shape[0]} vs {b.maps[0].shape[0]}")
    total = 0.0
    for fa, fb in zip(a.maps, b.maps):
        total = total + (gram(fa) - gram(fb)).abs().sum(dim=(1, 2))
    return total.mean()


def style_distance(backbone: PerceptualBackbone, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Sum over taps of the entrywise L1 distance between Gram matrices, batch-averaged."""
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"batch mismatch: {a.shape[0]} vs {b.shape[0]}")
    return style_distance_from_pyramids(extract_features(backbone, a), extract_features(backbone, b))

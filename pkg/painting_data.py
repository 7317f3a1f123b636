"""Manifest-driven loading of style paintings and content photos.

Manifests are JSON Lines files. Style records carry exactly the fields
`path`, `artist`, `period`, `genre`; content records carry only `path`.
Paths are relative to the data root (the manifest's directory by default).
Images are centre-cropped to a square, resized bilinearly to `image_size`
and scaled to [-1, 1].
"""

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torchvision.transforms.functional as TF
from PIL import Image, UnidentifiedImageError
from torchvision.transforms import InterpolationMode

from painter_core import AXES, AttributeSchema, DataError, ManifestError, check_image_tensor, seeded_rng

logger = logging.getLogger(__name__)

STYLE_MANIFEST = "style.jsonl"
CONTENT_MANIFEST = "content.jsonl"
STYLE_FIELDS = ("path", "artist", "period", "genre")
CONTENT_FIELDS = ("path",)
FLIP_PROBABILITY = 0.5

PathLike = Union[str, Path]


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    artist: Optional[str] = None
    period: Optional[str] = None
    genre: Optional[str] = None

    @property
    def labels(self) -> Tuple[str, str, str]:
        return self.artist, self.period, self.genre


@dataclass(frozen=True)
class StyleManifest:
    entries: Tuple[ManifestEntry, ...]
    schema: AttributeSchema
    root: Path
    pair_counts: Dict[Tuple[str, str], int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class ContentManifest:
    entries: Tuple[ManifestEntry, ...]
    root: Path

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class Batch:
    content: torch.Tensor
    style: torch.Tensor
    style_labels: torch.Tensor

    def __post_init__(self):
        if self.content.shape[0] != self.style.shape[0] or self.style.shape[0] != self.style_labels.shape[0]:
            raise DataError("content, style and label batch sizes differ")

    def to(self, dtype: torch.dtype) -> "Batch":
        return Batch(self.content.to(dtype), self.style.to(dtype), self.style_labels)


def _read_records(path: Path, expected: Sequence[str]) -> List[Tuple[int, Dict[str, str]]]:
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"{path}:{lineno}: malformed line ({e.msg})") from None
            if not isinstance(record, dict):
                raise ManifestError(f"{path}:{lineno}: malformed line (expected an object)")
            unknown = sorted(set(record) - set(expected))
            if unknown:
                raise ManifestError(f"{path}:{lineno}: unknown field '{unknown[0]}'")
            for name in expected:
                value = record.get(name)
                if not isinstance(value, str) or not value:
                    raise ManifestError(f"{path}:{lineno}: field '{name}' missing or empty")
            records.append((lineno, record))
    if not records:
        raise ManifestError(f"empty manifest: {path}")
    return records


def _resolve(root: Path, entry_path: str, manifest: Path, lineno: int) -> None:
    if not (root / entry_path).is_file():
        raise ManifestError(f"{manifest}:{lineno}: missing image file {root / entry_path}")


def load_manifest(path: PathLike, data_root: Optional[PathLike] = None,
                  schema: Optional[AttributeSchema] = None) -> StyleManifest:
    """Read a style manifest. Without `schema`, one is derived from the sorted
    unique labels of each axis; with it, every label must resolve."""
    path = Path(path)
    root = Path(data_root) if data_root is not None else path.parent
    records = _read_records(path, STYLE_FIELDS)
    entries = []
    for lineno, record in records:
        _resolve(root, record["path"], path, lineno)
        entries.append(ManifestEntry(**record))
    if schema is None:
        schema = AttributeSchema(
            artists=tuple(sorted({e.artist for e in entries})),
            periods=tuple(sorted({e.period for e in entries})),
            genres=tuple(sorted({e.genre for e in entries})),
        )
    else:
        for entry in entries:
            schema.indices(*entry.labels)
    pair_counts = dict(sorted(Counter((e.artist, e.period) for e in entries).items()))
    logger.info(f"Loaded {len(entries)} style entries from {path}")
    for (artist, period), count in pair_counts.items():
        logger.info(f"  {artist}/{period}: {count}")
    return StyleManifest(tuple(entries), schema, root, pair_counts)


def load_content_manifest(path: PathLike, data_root: Optional[PathLike] = None) -> ContentManifest:
    path = Path(path)
    root = Path(data_root) if data_root is not None else path.parent
    entries = []
    for lineno, record in _read_records(path, CONTENT_FIELDS):
        _resolve(root, record["path"], path, lineno)
        entries.append(ManifestEntry(path=record["path"]))
    logger.info(f"Loaded {len(entries)} content entries from {path}")
    return ContentManifest(tuple(entries), root)


def split_holdout(entries: Sequence[ManifestEntry], fraction: float,
                  seed: int) -> Tuple[Tuple[ManifestEntry, ...], Tuple[ManifestEntry, ...]]:
    """Deterministic (train, holdout) split; both keep manifest order."""
    if not 0 <= fraction < 1:
        raise DataError(f"holdout fraction must be in [0, 1), got {fraction}")
    n_holdout = int(round(fraction * len(entries)))
    order = torch.randperm(len(entries), generator=seeded_rng(seed)).tolist()
    held = set(order[:n_holdout])
    train = tuple(e for i, e in enumerate(entries) if i not in held)
    holdout = tuple(e for i, e in enumerate(entries) if i in held)
    return train, holdout


def preprocess(image_path: PathLike, image_size: int) -> torch.Tensor:
    """Decode one image into a (1, 3, image_size, image_size) tensor in [-1, 1]."""
    image_path = Path(image_path)
    try:
        with Image.open(image_path) as img:
            img.load()
    except (OSError, UnidentifiedImageError) as e:
        raise DataError(f"cannot decode image {image_path}: {e}") from None
    if img.mode == "P":
        img = img.convert("RGB")
    bands = len(img.getbands())
    if bands != 3:
        raise DataError(f"{image_path}: expected 3 channels, got {bands}")
    img = img.convert("RGB")
    side = min(img.size)
    img = TF.center_crop(img, [side, side])
    img = TF.resize(img, [image_size, image_size], interpolation=InterpolationMode.BILINEAR, antialias=True)
    tensor = TF.to_tensor(img) * 2.0 - 1.0
    return tensor.unsqueeze(0)


def save_image(tensor: torch.Tensor, path: PathLike) -> Path:
    """Write a (3, H, W) or (1, 3, H, W) tensor in [-1, 1] as an 8-bit RGB PNG."""
    if tensor.dim() == 4:
        tensor = tensor[0]
    pixels = ((tensor.detach().float().clamp(-1, 1) + 1.0) * 127.5).round().to(torch.uint8)
    array = np.ascontiguousarray(pixels.permute(1, 2, 0).cpu().numpy())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array).save(path, format="PNG")
    return path


class PaintingDataset:
    """Decoded style and content pools with seeded batch sampling."""

    def __init__(self, style: StyleManifest, content: ContentManifest, image_size: int, flip: bool = True):
        self.schema = style.schema
        self.image_size = image_size
        self.flip = flip
        self.style_entries = style.entries
        self.content_entries = content.entries
        self.style_images = self._decode(style.root, style.entries)
        self.content_images = self._decode(content.root, content.entries)
        self.style_labels = torch.tensor(
            [self.schema.indices(*e.labels) for e in style.entries], dtype=torch.long
        ).reshape(-1, len(AXES))

    def _decode(self, root: Path, entries: Sequence[ManifestEntry]) -> torch.Tensor:
        if not entries:
            return torch.empty(0, 3, self.image_size, self.image_size)
        images = torch.cat([preprocess(root / e.path, self.image_size) for e in entries])
        return check_image_tensor(images, 1, bounded=True)

    def sample_batch(self, rng: torch.Generator, batch_size: int) -> Batch:
        """Uniform sampling with replacement, then optional horizontal flips.

        Draw order: content indices, style indices, content flips, style flips.
        """
        n_content, n_style = len(self.content_images), len(self.style_images)
        if n_content == 0 or n_style == 0:
            raise DataError("cannot sample from an empty content or style pool")
        content_idx = torch.randint(n_content, (batch_size,), generator=rng)
        style_idx = torch.randint(n_style, (batch_size,), generator=rng)
        content = self.content_images[content_idx]
        style = self.style_images[style_idx]
        if self.flip:
            content = _random_flip(content, rng)
            style = _random_flip(style, rng)
        return Batch(content, style, self.style_labels[style_idx])


def _random_flip(images: torch.Tensor, rng: torch.Generator) -> torch.Tensor:
    mask = torch.rand(images.shape[0], generator=rng) < FLIP_PROBABILITY
    return torch.where(mask.view(-1, 1, 1, 1), images.flip(3), images)


def load_dataset(data_root: PathLike, image_size: int, flip: bool = True,
                 schema: Optional[AttributeSchema] = None) -> PaintingDataset:
    """Load `style.jsonl` and `content.jsonl` from a data root."""
    data_root = Path(data_root)
    style = load_manifest(data_root / STYLE_MANIFEST, data_root, schema)
    content = load_content_manifest(data_root / CONTENT_MANIFEST, data_root)
    return PaintingDataset(style, content, image_size, flip)

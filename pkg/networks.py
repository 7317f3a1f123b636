"""The four networks of the asymmetric cycle.

- ForwardGenerator (G): encoder, plain residual blocks, AdaIN residual blocks
  driven by the condition MLP, upsample+conv decoder.
- BackwardGenerator (F): the same macro-structure without any conditioning.
- StyleDiscriminator (D_y): shared trunk, patch realness head and one
  classification head per attribute axis.
- ContentDiscriminator (D_x): trunk and realness head only.

No transposed convolutions are used anywhere; decoders upsample with
nearest-neighbour interpolation followed by a 3x3 convolution.
"""

import logging
from typing import Iterator, List, NamedTuple, Optional, Tuple, Union

import torch
import torch.nn as nn

from conditioning import AdaInParams, AdaptiveInstanceNorm2d, AttributeSet, ConditionParser, parse_condition
from config import RunConfig
from painter_core import AttributeSchema, ShapeError, check_image_tensor

logger = logging.getLogger(__name__)

INIT_STD = 0.02
LEAKY_SLOPE = 0.2


##################################################################################
# Basic blocks
##################################################################################

def _norm_layer(norm: str, dim: int) -> nn.Module:
    if norm == "in":
        return nn.InstanceNorm2d(dim)
    if norm == "ln":
        # layer norm over (C, H, W); keeps the channel statistics set by AdaIN
        return nn.GroupNorm(1, dim)
    if norm == "none":
        return nn.Identity()
    raise ValueError(f"unsupported norm: {norm}")


def _activation(name: str) -> nn.Module:
    if name == "relu":
        return nn.ReLU(inplace=True)
    if name == "lrelu":
        return nn.LeakyReLU(LEAKY_SLOPE, inplace=True)
    if name == "tanh":
        return nn.Tanh()
    if name == "none":
        return nn.Identity()
    raise ValueError(f"unsupported activation: {name}")


class Conv2dBlock(nn.Module):
    """pad -> conv -> norm -> activation."""

    def __init__(self, in_dim: int, out_dim: int, kernel: int, stride: int, padding: int,
                 norm: str = "none", activation: str = "relu", pad_type: str = "reflect"):
        super().__init__()
        self.pad = nn.ReflectionPad2d(padding) if pad_type == "reflect" else nn.ZeroPad2d(padding)
        self.conv = nn.Conv2d(in_dim, out_dim, kernel, stride)
        self.norm = _norm_layer(norm, out_dim)
        self.activation = _activation(activation)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.activation(self.norm(self.conv(self.pad(x))))


class ResBlock(nn.Module):
    """conv-IN-relu-conv-IN with an additive skip."""

    def __init__(self, dim: int):
        super().__init__()
        self.model = nn.Sequential(
            Conv2dBlock(dim, dim, 3, 1, 1, norm="in", activation="relu"),
            Conv2dBlock(dim, dim, 3, 1, 1, norm="in", activation="none"),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.model(x)


class AdaInResBlock(nn.Module):
    """ResBlock with both instance norms replaced by AdaIN."""

    def __init__(self, dim: int, eps: float):
        super().__init__()
        self.conv1 = Conv2dBlock(dim, dim, 3, 1, 1, norm="none", activation="none")
        self.norm1 = AdaptiveInstanceNorm2d(dim, eps)
        self.relu = nn.ReLU(inplace=True)
        self.conv2 = Conv2dBlock(dim, dim, 3, 1, 1, norm="none", activation="none")
        self.norm2 = AdaptiveInstanceNorm2d(dim, eps)

    def forward(self, x: torch.Tensor, first: Tuple[torch.Tensor, torch.Tensor],
                second: Tuple[torch.Tensor, torch.Tensor]) -> torch.Tensor:
        h = self.relu(self.norm1(self.conv1(x), *first))
        h = self.norm2(self.conv2(h), *second)
        return x + h


class Encoder(nn.Module):
    """Stem conv followed by stride-2 downsampling blocks."""

    def __init__(self, config: RunConfig):
        super().__init__()
        dim = config.channel_base
        k = config.stem_kernel
        layers = [Conv2dBlock(3, dim, k, 1, k // 2, norm="in", activation="relu")]
        for _ in range(config.n_downsample):
            layers.append(Conv2dBlock(dim, dim * 2, 4, 2, 1, norm="in", activation="relu"))
            dim *= 2
        self.model = nn.Sequential(*layers)
        self.output_dim = dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.model(x)


class Decoder(nn.Module):
    """Nearest 2x upsampling + 3x3 conv per stage, tanh output."""

    def __init__(self, config: RunConfig, dim: int):
        super().__init__()
        layers: List[nn.Module] = []
        for _ in range(config.n_downsample):
            layers += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                Conv2dBlock(dim, dim // 2, 3, 1, 1, norm="ln", activation="relu"),
            ]
            dim //= 2
        k = config.stem_kernel
        layers.append(Conv2dBlock(dim, 3, k, 1, k // 2, norm="none", activation="tanh"))
        self.model = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.model(x)


##################################################################################
# Generators
##################################################################################

class ForwardGenerator(nn.Module):
    """G(x, c): stylise a content image under an attribute condition."""

    def __init__(self, config: RunConfig, condition_dim: int):
        super().__init__()
        self.downsample_factor = config.downsample_factor
        self.condition_dim = condition_dim
        self.encoder = Encoder(config)
        dim = self.encoder.output_dim
        self.res_blocks = nn.Sequential(*[ResBlock(dim) for _ in range(config.n_res_blocks)])
        self.adain_blocks = nn.ModuleList([AdaInResBlock(dim, config.adain_eps) for _ in range(config.n_adain_blocks)])
        self.decoder = Decoder(config, dim)
        # two AdaIN layers per block, in forward order
        self.adain_channels = tuple(dim for _ in range(2 * config.n_adain_blocks))
        self.parser = ConditionParser(condition_dim, self.adain_channels, config.mlp_hidden, config.mlp_layers)

    def _condition_matrix(self, condition: Union[AttributeSet, torch.Tensor], batch: int) -> torch.Tensor:
        if isinstance(condition, AttributeSet):
            condition = condition.concatenated
        if condition.dim() == 1:
            condition = condition.unsqueeze(0).expand(batch, -1)
        if condition.shape != (batch, self.condition_dim):
            raise ShapeError(
                f"condition shape {tuple(condition.shape)} does not match ({batch}, {self.condition_dim})"
            )
        return condition

    def adain_params(self, condition: Union[AttributeSet, torch.Tensor], batch: int = 1) -> AdaInParams:
        return parse_condition(self._condition_matrix(condition, batch), self.parser)

    def forward(self, x: torch.Tensor, condition: Union[AttributeSet, torch.Tensor]) -> torch.Tensor:
        params = self.adain_params(condition, x.shape[0])
        h = self.res_blocks(self.encoder(x))
        for i, block in enumerate(self.adain_blocks):
            h = block(h, params[2 * i], params[2 * i + 1])
        return self.decoder(h)


class BackwardGenerator(nn.Module):
    """F(y): strip style back to content. Has no conditioning pathway."""

    def __init__(self, config: RunConfig):
        super().__init__()
        self.downsample_factor = config.downsample_factor
        self.encoder = Encoder(config)
        dim = self.encoder.output_dim
        n_blocks = config.n_res_blocks + config.n_adain_blocks
        self.res_blocks = nn.Sequential(*[ResBlock(dim) for _ in range(n_blocks)])
        self.decoder = Decoder(config, dim)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.res_blocks(self.encoder(y)))


##################################################################################
# Discriminators
##################################################################################

class StyleOutput(NamedTuple):
    realness: torch.Tensor
    artist: torch.Tensor
    period: torch.Tensor
    genre: torch.Tensor

    @property
    def logits(self) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        return self.artist, self.period, self.genre


def _trunk(config: RunConfig) -> Tuple[nn.Sequential, int]:
    dim = config.disc_base
    layers = [nn.Conv2d(3, dim, 4, 2, 1), nn.LeakyReLU(LEAKY_SLOPE)]
    for _ in range(1, config.disc_downsample):
        layers += [nn.Conv2d(dim, dim * 2, 4, 2, 1), nn.LeakyReLU(LEAKY_SLOPE)]
        dim *= 2
    return nn.Sequential(*layers), dim


class StyleDiscriminator(nn.Module):
    """D_y: realness plus artist / period / genre classification on one trunk."""

    def __init__(self, config: RunConfig, schema: AttributeSchema):
        super().__init__()
        self.trunk, dim = _trunk(config)
        self.realness = nn.Conv2d(dim, 1, 3, 1, 1, bias=False)
        n_artists, n_periods, n_genres = schema.sizes
        self.artist_head = nn.Linear(dim, n_artists, bias=False)
        self.period_head = nn.Linear(dim, n_periods, bias=False)
        self.genre_head = nn.Linear(dim, n_genres, bias=False)

    def forward(self, img: torch.Tensor) -> StyleOutput:
        h = self.trunk(img)
        # patch map averaged into one logit per sample
        realness = self.realness(h).mean(dim=(1, 2, 3))
        pooled = h.mean(dim=(2, 3))
        return StyleOutput(realness, self.artist_head(pooled), self.period_head(pooled), self.genre_head(pooled))


class ContentDiscriminator(nn.Module):
    """D_x: realness only."""

    def __init__(self, config: RunConfig):
        super().__init__()
        self.trunk, dim = _trunk(config)
        self.realness = nn.Conv2d(dim, 1, 3, 1, 1, bias=False)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        return self.realness(self.trunk(img)).mean(dim=(1, 2, 3))


##################################################################################
# Initialisation, container and inspection
##################################################################################

def init_weights(module: nn.Module, rng: torch.Generator, std: float = INIT_STD) -> None:
    """Seeded N(0, std) conv/linear weights, zero biases; the condition MLP
    uses its own scheme."""
    if isinstance(module, ConditionParser):
        module.reset_parameters(rng)
        return
    if isinstance(module, (nn.Conv2d, nn.Linear)):
        with torch.no_grad():
            module.weight.copy_(torch.randn(module.weight.shape, generator=rng) * std)
            if module.bias is not None:
                module.bias.zero_()
    for child in module.children():
        init_weights(child, rng, std)


class PainterNetworks(nn.Module):
    """Owns G, F, D_y and D_x for one run."""

    def __init__(self, config: RunConfig, schema: AttributeSchema):
        super().__init__()
        self.forward_generator = ForwardGenerator(config, schema.condition_dim)
        self.backward_generator = BackwardGenerator(config)
        self.style_discriminator = StyleDiscriminator(config, schema)
        self.content_discriminator = ContentDiscriminator(config)

    @classmethod
    def build(cls, config: RunConfig, schema: AttributeSchema, rng: torch.Generator) -> "PainterNetworks":
        networks = cls(config, schema)
        init_weights(networks, rng)
        if config.dtype == "float64":
            networks = networks.double()
        logger.info(
            f"Built networks: G={count_parameters(networks.forward_generator)} "
            f"F={count_parameters(networks.backward_generator)} "
            f"D_y={count_parameters(networks.style_discriminator)} "
            f"D_x={count_parameters(networks.content_discriminator)} parameters"
        )
        return networks

    def generator_parameters(self) -> Iterator[nn.Parameter]:
        yield from self.forward_generator.parameters()
        yield from self.backward_generator.parameters()

    def discriminator_parameters(self) -> Iterator[nn.Parameter]:
        yield from self.style_discriminator.parameters()
        yield from self.content_discriminator.parameters()


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def contains_transposed_convolution(module: nn.Module) -> bool:
    transposed = (nn.ConvTranspose1d, nn.ConvTranspose2d, nn.ConvTranspose3d)
    return any(isinstance(m, transposed) for m in module.modules())


def conditioning_parameter_count(module: nn.Module) -> int:
    """Parameters sitting on a conditioning path (condition MLP or AdaIN layers)."""
    total = 0
    for m in module.modules():
        if isinstance(m, (ConditionParser, AdaptiveInstanceNorm2d)):
            total += count_parameters(m)
    return total


def set_requires_grad(module: nn.Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)


##################################################################################
# Operations
##################################################################################

def forward_generate(generator: ForwardGenerator, x: torch.Tensor,
                     condition: Union[AttributeSet, torch.Tensor]) -> torch.Tensor:
    """Stylised image y~ = G(x, c); same shape as x, values in [-1, 1]."""
    check_image_tensor(x, generator.downsample_factor)
    return generator(x, condition)


def backward_generate(generator: BackwardGenerator, y: torch.Tensor) -> torch.Tensor:
    check_image_tensor(y, generator.downsample_factor)
    return generator(y)


def discriminate_style(discriminator: StyleDiscriminator, img: torch.Tensor,
                       multiple: Optional[int] = None) -> StyleOutput:
    """Realness logit and attribute logits (B, N_a), (B, N_p), (B, N_g)."""
    check_image_tensor(img, multiple or 1)
    return discriminator(img)


def discriminate_content(discriminator: ContentDiscriminator, img: torch.Tensor,
                         multiple: Optional[int] = None) -> torch.Tensor:
    check_image_tensor(img, multiple or 1)
    return discriminator(img)

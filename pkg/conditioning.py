"""Attribute conditioning: one-hot attributes, genre perturbation, MLP parsing and AdaIN.

The condition c = (artist, period, genre) is three one-hot vectors concatenated
in that order. During training the hot genre entry becomes 1 + delta with
delta ~ N(mu, sigma^2), clamped to [clamp_low, clamp_high]. The MLP maps c to
one (gamma, beta) pair per AdaIN layer in network forward order, gamma first.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import torch
import torch.nn as nn

from config import ADAIN_EPS, GenrePerturbationParams
from painter_core import AttributeSchema, Mode, PreconditionError, ShapeError, UnknownLabelError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AttributeSet:
    """Condition vectors for one (artist, period, genre) triple."""
    artist: torch.Tensor
    period: torch.Tensor
    genre: torch.Tensor
    labels: Optional[Tuple[str, str, str]] = None

    @property
    def concatenated(self) -> torch.Tensor:
        return torch.cat([self.artist, self.period, self.genre])

    def as_batch(self, batch_size: int) -> torch.Tensor:
        return self.concatenated.unsqueeze(0).expand(batch_size, -1)

    @classmethod
    def from_vector(cls, vector: Sequence[float], schema: AttributeSchema) -> "AttributeSet":
        """Split a raw condition vector. Values are not forced to be one-hot, so
        callers can mix attributes freely."""
        vector = torch.as_tensor(vector, dtype=torch.float32).flatten()
        n_a, n_p, n_g = schema.sizes
        if vector.numel() != schema.condition_dim:
            raise ShapeError(
                f"condition vector has length {vector.numel()}, expected {schema.condition_dim} "
                f"({n_a} artists + {n_p} periods + {n_g} genres)"
            )
        if not torch.isfinite(vector).all():
            raise PreconditionError("condition vector contains non-finite values")
        return cls(
            artist=vector[:n_a].clone(),
            period=vector[n_a:n_a + n_p].clone(),
            genre=vector[n_a + n_p:].clone(),
        )


@dataclass(frozen=True)
class AdaInParams:
    """Per-AdaIN-layer (gamma, beta), each of shape (B, C) for that layer."""
    slots: Tuple[Tuple[torch.Tensor, torch.Tensor], ...]

    def __len__(self) -> int:
        return len(self.slots)

    def __getitem__(self, index: int) -> Tuple[torch.Tensor, torch.Tensor]:
        return self.slots[index]

    @property
    def channels(self) -> Tuple[int, ...]:
        return tuple(gamma.shape[-1] for gamma, _ in self.slots)

    @property
    def total_count(self) -> int:
        """Parameters per sample: 2 x sum of slot channel counts."""
        return 2 * sum(self.channels)


def adain_parameter_count(channels: Sequence[int]) -> int:
    return 2 * sum(channels)


def encode_attribute(label: str, axis_labels: Sequence[str], axis_name: str = "attribute",
                     dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """One-hot vector of len(axis_labels) with a 1 at the label's index."""
    labels = list(axis_labels)
    if label not in labels:
        raise UnknownLabelError(
            f"unknown {axis_name} label '{label}'; valid labels: {', '.join(labels)}"
        )
    onehot = torch.zeros(len(labels), dtype=dtype)
    onehot[labels.index(label)] = 1.0
    return onehot


def _hot_index(onehot: torch.Tensor) -> int:
    nonzero = torch.nonzero(onehot).flatten()
    if onehot.dim() != 1 or nonzero.numel() != 1 or onehot[nonzero[0]].item() != 1.0:
        raise PreconditionError("genre vector must have exactly one non-zero entry equal to 1")
    return int(nonzero[0])


def perturb_genre(onehot: torch.Tensor, params: GenrePerturbationParams,
                  rng: Optional[torch.Generator]) -> torch.Tensor:
    """Add N(mu, sigma^2) noise to the hot entry of a genre one-hot.

    Draws exactly one float64 standard normal from `rng` when enabled.
    """
    index = _hot_index(onehot)
    out = onehot.clone()
    if not params.enabled:
        return out
    if rng is None:
        raise PreconditionError("genre perturbation needs a random source")
    draw = torch.randn((), generator=rng, dtype=torch.float64).item()
    hot = 1.0 + params.mu + params.sigma * draw
    out[index] = min(max(hot, params.clamp_low), params.clamp_high)
    return out


def build_condition(artist: str, period: str, genre: str, mode: Mode, schema: AttributeSchema,
                    params: GenrePerturbationParams, rng: Optional[torch.Generator] = None,
                    dtype: torch.dtype = torch.float32) -> AttributeSet:
    """Attribute set for a label triple; genre is perturbed only in TRAIN mode."""
    artist_vec = encode_attribute(artist, schema.artists, "artist", dtype)
    period_vec = encode_attribute(period, schema.periods, "period", dtype)
    genre_vec = encode_attribute(genre, schema.genres, "genre", dtype)
    if mode is Mode.TRAIN:
        genre_vec = perturb_genre(genre_vec, params, rng)
    return AttributeSet(artist_vec, period_vec, genre_vec, labels=(artist, period, genre))


def build_condition_batch(label_indices: torch.Tensor, mode: Mode, schema: AttributeSchema,
                          params: GenrePerturbationParams, rng: Optional[torch.Generator] = None,
                          dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(B, N_a+N_p+N_g) conditions for a (B, 3) tensor of label indices.

    Samples are perturbed one after another, so the result equals calling
    build_condition per row with the same random source.
    """
    rows = []
    for artist, period, genre in label_indices.tolist():
        condition = build_condition(
            schema.artists[artist], schema.periods[period], schema.genres[genre],
            mode, schema, params, rng, dtype,
        )
        rows.append(condition.concatenated)
    return torch.stack(rows)


class ConditionParser(nn.Module):
    """MLP that unfolds a condition vector into AdaIN parameters."""

    def __init__(self, input_dim: int, adain_channels: Sequence[int], hidden: int = 256, n_layers: int = 3):
        super().__init__()
        self.input_dim = input_dim
        self.adain_channels = tuple(adain_channels)
        self.output_dim = adain_parameter_count(self.adain_channels)
        layers = []
        width = input_dim
        for _ in range(n_layers):
            layers += [nn.Linear(width, hidden), nn.ReLU(inplace=True)]
            width = hidden
        self.body = nn.Sequential(*layers)
        self.head = nn.Linear(width, self.output_dim)

    def reset_parameters(self, rng: torch.Generator) -> None:
        """He-normal hidden layers; the head starts near gamma=1, beta=0."""
        with torch.no_grad():
            for layer in self.body:
                if isinstance(layer, nn.Linear):
                    std = (2.0 / layer.in_features) ** 0.5
                    layer.weight.copy_(torch.randn(layer.weight.shape, generator=rng) * std)
                    layer.bias.zero_()
            self.head.weight.copy_(torch.randn(self.head.weight.shape, generator=rng) * 0.02)
            bias = torch.zeros(self.output_dim)
            offset = 0
            for channels in self.adain_channels:
                bias[offset:offset + channels] = 1.0
                offset += 2 * channels
            self.head.bias.copy_(bias)

    def forward(self, condition: torch.Tensor) -> torch.Tensor:
        return self.head(self.body(condition))


def parse_condition(condition: Union[AttributeSet, torch.Tensor], parser: ConditionParser) -> AdaInParams:
    """Run the MLP and slice its output into (gamma, beta) per AdaIN layer."""
    if isinstance(condition, AttributeSet):
        condition = condition.concatenated
    if condition.dim() == 1:
        condition = condition.unsqueeze(0)
    if condition.shape[-1] != parser.input_dim:
        raise ShapeError(
            f"condition length {condition.shape[-1]} does not match MLP input {parser.input_dim}"
        )
    weight = parser.head.weight
    raw = parser(condition.to(device=weight.device, dtype=weight.dtype))
    slots = []
    offset = 0
    for channels in parser.adain_channels:
        gamma = raw[:, offset:offset + channels]
        beta = raw[:, offset + channels:offset + 2 * channels]
        slots.append((gamma, beta))
        offset += 2 * channels
    return AdaInParams(tuple(slots))


def adain(features: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor, epsilon: float = ADAIN_EPS) -> torch.Tensor:
    """gamma * (z - mean(z)) / sqrt(var(z) + eps) + beta, per sample and channel.

    Moments are taken over the spatial dimensions; variance is the biased
    (population) estimate. gamma/beta may be (C,) or (B, C).
    """
    if epsilon <= 0:
        raise PreconditionError(f"epsilon must be positive, got {epsilon}")
    if features.dim() != 4:
        raise ShapeError(f"adain expects a rank-4 tensor, got rank {features.dim()}")
    batch, channels = features.shape[:2]
    if gamma.shape[-1] != channels or beta.shape[-1] != channels:
        raise ShapeError(
            f"gamma/beta length ({gamma.shape[-1]}, {beta.shape[-1]}) does not match {channels} channels"
        )
    mean = features.mean(dim=(2, 3), keepdim=True)
    var = features.var(dim=(2, 3), unbiased=False, keepdim=True)
    normalized = (features - mean) / torch.sqrt(var + epsilon)
    gamma = gamma.reshape(-1, channels, 1, 1)
    beta = beta.reshape(-1, channels, 1, 1)
    return normalized * gamma + beta


class AdaptiveInstanceNorm2d(nn.Module):
    """Instance norm whose affine parameters are supplied at call time."""

    def __init__(self, num_features: int, eps: float = ADAIN_EPS):
        super().__init__()
        self.num_features = num_features
        self.eps = eps

    def forward(self, x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
        return adain(x, gamma, beta, self.eps)

    def __repr__(self):
        return f"{self.__class__.__name__}({self.num_features})"

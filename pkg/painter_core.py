"""Core types for attribute-guided painting generation.

This module holds the pieces every other module leans on:
- The error hierarchy raised across the library
- The attribute schema (artist / period / genre label spaces)
- ImageTensor validation
- Seeded random sources
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Sequence, Tuple

import torch

logger = logging.getLogger(__name__)

AXES: Tuple[str, str, str] = ("artist", "period", "genre")
IMAGE_CHANNELS = 3
RANGE_SLACK = 1e-6


class PainterError(Exception):
    """Base class for every error raised by this library."""


class ConfigError(PainterError):
    """Invalid or unreadable run configuration."""


class DataError(PainterError):
    """Problem with manifests, images or labels."""


class ManifestError(DataError):
    """Malformed manifest file."""


class UnknownLabelError(DataError, KeyError):
    """A label that is not part of the attribute schema."""

    def __str__(self) -> str:
        # KeyError would otherwise repr() the message
        return str(self.args[0]) if self.args else ""


class ShapeError(PainterError, ValueError):
    """Tensor shape or dimension mismatch."""


class PreconditionError(PainterError, ValueError):
    """Input violates an operation's precondition."""


class NumericalError(PainterError):
    """Non-finite values during optimisation."""


class CheckpointError(PainterError):
    """Checkpoint cannot be written, read or matched."""


class EvaluationError(PainterError):
    """Metric computation cannot proceed."""


class Mode(Enum):
    """Pipeline mode. Genre perturbation only happens in TRAIN."""
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered label spaces for the three painting attributes."""
    artists: Tuple[str, ...]
    periods: Tuple[str, ...]
    genres: Tuple[str, ...]

    def __post_init__(self):
        for axis in AXES:
            labels = tuple(getattr(self, self._field(axis)))
            object.__setattr__(self, self._field(axis), labels)
            if len(labels) < 2:
                raise DataError(f"{axis} axis needs at least 2 labels, got {len(labels)}")
            if any(not isinstance(label, str) or not label for label in labels):
                raise DataError(f"{axis} labels must be non-empty strings")
            if len(set(labels)) != len(labels):
                raise DataError(f"{axis} labels must be unique")

    @staticmethod
    def _field(axis: str) -> str:
        if axis not in AXES:
            raise KeyError(f"unknown attribute axis '{axis}'")
        return axis + "s"

    def axis(self, name: str) -> Tuple[str, ...]:
        return getattr(self, self._field(name))

    @property
    def sizes(self) -> Tuple[int, int, int]:
        return len(self.artists), len(self.periods), len(self.genres)

    @property
    def condition_dim(self) -> int:
        return sum(self.sizes)

    def index(self, axis: str, label: str) -> int:
        labels = self.axis(axis)
        try:
            return labels.index(label)
        except ValueError:
            raise UnknownLabelError(
                f"unknown {axis} label '{label}'; valid labels: {', '.join(labels)}"
            ) from None

    def label(self, axis: str, index: int) -> str:
        return self.axis(axis)[index]

    def indices(self, artist: str, period: str, genre: str) -> Tuple[int, int, int]:
        return (
            self.index("artist", artist),
            self.index("period", period),
            self.index("genre", genre),
        )

    def mismatched_axis(self, other: "AttributeSchema") -> str:
        """Name of the first axis that differs from `other`, or "" if equal."""
        for axis in AXES:
            if self.axis(axis) != other.axis(axis):
                return axis
        return ""

    def to_dict(self) -> Dict[str, List[str]]:
        return {
            "artists": list(self.artists),
            "periods": list(self.periods),
            "genres": list(self.genres),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Sequence[str]]) -> "AttributeSchema":
        return cls(
            artists=tuple(data["artists"]),
            periods=tuple(data["periods"]),
            genres=tuple(data["genres"]),
        )


def check_image_tensor(tensor: torch.Tensor, multiple: int = 4, bounded: bool = False) -> torch.Tensor:
    """Validate an ImageTensor (B, 3, H, W) and return it unchanged."""
    if not isinstance(tensor, torch.Tensor) or tensor.dim() != 4:
        raise ShapeError(f"expected a rank-4 image tensor, got {getattr(tensor, 'shape', type(tensor))}")
    _, channels, height, width = tensor.shape
    if channels != IMAGE_CHANNELS:
        raise ShapeError(f"expected {IMAGE_CHANNELS} channels, got {channels}")
    if height % multiple or width % multiple:
        raise ShapeError(f"spatial size {height}x{width} is not a multiple of {multiple}")
    if not torch.isfinite(tensor).all():
        raise ShapeError("image tensor contains non-finite values")
    if bounded and (tensor.min() < -1 - RANGE_SLACK or tensor.max() > 1 + RANGE_SLACK):
        raise ShapeError("image tensor values fall outside [-1, 1]")
    return tensor


def seeded_rng(seed: int) -> torch.Generator:
    """Random source whose draw sequence is fully determined by `seed`."""
    generator = torch.Generator(device="cpu")
    generator.manual_seed(int(seed))
    return generator


def spawn_rng(parent: torch.Generator) -> torch.Generator:
    """Independent child source derived deterministically from `parent`."""
    child_seed = int(torch.randint(0, 2**62, (1,), generator=parent).item())
    return seeded_rng(child_seed)

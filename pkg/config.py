"""Configuration for attribute-guided painting generation.

Default values live here as module constants; `RunConfig` validates a JSON
document against them. The loss weights default to lambda_rec=10,
lambda_reg=1, lambda_s=1e-4. Optimiser, batch size and step count are not
published upstream, so their defaults are the usual translation-GAN choices.
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, PositiveInt, ValidationError, field_validator, model_validator

from painter_core import ConfigError

logger = logging.getLogger(__name__)

ENV_CONFIG_PATH = "ATTRIBPAINT_CONFIG"

# Loss weights
DEFAULT_LAMBDA_REC = 10.0
DEFAULT_LAMBDA_REG = 1.0
DEFAULT_LAMBDA_S = 1e-4

# Genre perturbation
DEFAULT_GENRE_MU = 0.0
DEFAULT_GENRE_SIGMA = 0.2
GENRE_CLAMP_LOW = 0.5
GENRE_CLAMP_HIGH = 1.5

# Architecture (desk scale)
DEFAULT_IMAGE_SIZE = 64
DEFAULT_CHANNEL_BASE = 32
DEFAULT_N_DOWNSAMPLE = 2
DEFAULT_N_RES_BLOCKS = 2
DEFAULT_N_ADAIN_BLOCKS = 2
DEFAULT_MLP_HIDDEN = 256
DEFAULT_MLP_LAYERS = 3
DEFAULT_DISC_BASE = 32
DEFAULT_DISC_DOWNSAMPLE = 3
DEFAULT_STEM_KERNEL = 7
ADAIN_EPS = 1e-5

# Optimisation
DEFAULT_LEARNING_RATE = 2e-4
DEFAULT_BETA1 = 0.5
DEFAULT_BETA2 = 0.999
DEFAULT_BATCH_SIZE = 4
DEFAULT_TOTAL_STEPS = 500
DEFAULT_SEED = 0
DEFAULT_CHECKPOINT_INTERVAL = 100
DEFAULT_LOG_INTERVAL = 10

# Perceptual backbone
DEFAULT_BACKBONE_WIDTH_DIVISOR = 8

# Judge classifier
DEFAULT_JUDGE_STEPS = 300
DEFAULT_JUDGE_LEARNING_RATE = 1e-3
DEFAULT_JUDGE_CHANNELS = 16
DEFAULT_JUDGE_BATCH_SIZE = 16
DEFAULT_IS_SPLITS = 10

# Logging
LOG_LEVEL = "INFO"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class LossWeights(_Section):
    """Weights of the full objective. Adversarial terms carry unit weight."""
    lambda_rec: float = DEFAULT_LAMBDA_REC
    lambda_reg: float = DEFAULT_LAMBDA_REG
    lambda_s: float = DEFAULT_LAMBDA_S

    @field_validator("lambda_rec", "lambda_reg", "lambda_s")
    @classmethod
    def _non_negative(cls, value: float, info) -> float:
        if value < 0:
            raise ValueError(f"{info.field_name} must be non-negative")
        return value


class GenrePerturbationParams(_Section):
    """Gaussian noise N(mu, sigma^2) added to the hot genre entry in training."""
    mu: float = DEFAULT_GENRE_MU
    sigma: float = DEFAULT_GENRE_SIGMA
    enabled: bool = True
    clamp_low: float = GENRE_CLAMP_LOW
    clamp_high: float = GENRE_CLAMP_HIGH

    @field_validator("sigma")
    @classmethod
    def _sigma_non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError("sigma must be non-negative")
        return value

    @model_validator(mode="after")
    def _clamp_order(self) -> "GenrePerturbationParams":
        if self.clamp_low > self.clamp_high:
            raise ValueError("clamp_low must not exceed clamp_high")
        return self


class OptimizerSettings(_Section):
    learning_rate: float = Field(DEFAULT_LEARNING_RATE, gt=0)
    beta1: float = Field(DEFAULT_BETA1, ge=0, lt=1)
    beta2: float = Field(DEFAULT_BETA2, ge=0, lt=1)


class PerceptualSettings(_Section):
    """Frozen VGG16 backbone. Without `weights` a tiny seeded backbone is built."""
    weights: Optional[str] = None
    width_divisor: PositiveInt = DEFAULT_BACKBONE_WIDTH_DIVISOR


class JudgeSettings(_Section):
    steps: PositiveInt = DEFAULT_JUDGE_STEPS
    learning_rate: float = Field(DEFAULT_JUDGE_LEARNING_RATE, gt=0)
    channels: PositiveInt = DEFAULT_JUDGE_CHANNELS
    batch_size: PositiveInt = DEFAULT_JUDGE_BATCH_SIZE


class RunConfig(_Section):
    """Everything that determines a run. Immutable once built."""
    image_size: PositiveInt = DEFAULT_IMAGE_SIZE
    channel_base: PositiveInt = DEFAULT_CHANNEL_BASE
    n_downsample: PositiveInt = DEFAULT_N_DOWNSAMPLE
    n_res_blocks: PositiveInt = DEFAULT_N_RES_BLOCKS
    n_adain_blocks: PositiveInt = DEFAULT_N_ADAIN_BLOCKS
    mlp_hidden: PositiveInt = DEFAULT_MLP_HIDDEN
    mlp_layers: PositiveInt = DEFAULT_MLP_LAYERS
    disc_base: PositiveInt = DEFAULT_DISC_BASE
    disc_downsample: PositiveInt = DEFAULT_DISC_DOWNSAMPLE
    stem_kernel: PositiveInt = DEFAULT_STEM_KERNEL
    adain_eps: float = Field(ADAIN_EPS, gt=0)
    loss_weights: LossWeights = LossWeights()
    perturbation: GenrePerturbationParams = GenrePerturbationParams()
    optimizer: OptimizerSettings = OptimizerSettings()
    perceptual: PerceptualSettings = PerceptualSettings()
    judge: JudgeSettings = JudgeSettings()
    batch_size: PositiveInt = DEFAULT_BATCH_SIZE
    total_steps: int = Field(DEFAULT_TOTAL_STEPS, ge=0)
    seed: int = DEFAULT_SEED
    checkpoint_interval: PositiveInt = DEFAULT_CHECKPOINT_INTERVAL
    log_interval: PositiveInt = DEFAULT_LOG_INTERVAL
    flip_augment: bool = True
    holdout_fraction: float = Field(0.0, ge=0, lt=1)
    dtype: Literal["float32", "float64"] = "float32"

    @field_validator("stem_kernel")
    @classmethod
    def _odd_kernel(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError("stem_kernel must be odd")
        return value

    @model_validator(mode="after")
    def _divisibility(self) -> "RunConfig":
        factor = 2 ** self.n_downsample
        if self.image_size % factor:
            raise ValueError(f"image_size not divisible by {factor} (required by n_downsample)")
        if self.image_size < 2 ** self.disc_downsample:
            raise ValueError(f"image_size must be at least {2 ** self.disc_downsample} (required by disc_downsample)")
        return self

    @property
    def downsample_factor(self) -> int:
        return 2 ** self.n_downsample

    def to_dict(self) -> Dict[str, Any]:
        """Convert configuration to a plain dictionary."""
        return self.model_dump(mode="json")

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Copy with top-level keys replaced, re-validated."""
        return build_config({**self.to_dict(), **overrides})

    @classmethod
    def from_env(cls) -> "RunConfig":
        """Load from the path in ATTRIBPAINT_CONFIG, or defaults if unset."""
        path = os.getenv(ENV_CONFIG_PATH)
        if not path:
            return cls()
        return load_config(path)


FULL_PRESET: Dict[str, Any] = {
    "image_size": 256,
    "channel_base": 64,
    "n_downsample": 2,
    "n_res_blocks": 4,
    "n_adain_blocks": 4,
    "disc_base": 64,
    "disc_downsample": 4,
    "batch_size": 1,
    "total_steps": 200000,
    "perceptual": {"width_divisor": 1},
}

PRESETS: Dict[str, Dict[str, Any]] = {
    "desk": {},
    "full": FULL_PRESET,
}


def _merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _describe(error: ValidationError) -> str:
    messages = []
    for item in error.errors():
        key = ".".join(str(part) for part in item["loc"]) or "<root>"
        if item["type"] == "extra_forbidden":
            messages.append(f"unknown key '{key}'")
        else:
            msg = item["msg"].removeprefix("Value error, ")
            messages.append(msg if not item["loc"] or key in msg else f"{key}: {msg}")
    return "; ".join(messages)


def build_config(document: Dict[str, Any]) -> RunConfig:
    """Validate a config mapping, applying an optional `preset` first."""
    if not isinstance(document, dict):
        raise ConfigError("config document must be a key-value object")
    document = dict(document)
    preset_name = document.pop("preset", "desk")
    if preset_name not in PRESETS:
        raise ConfigError(f"preset: unknown preset '{preset_name}' (choose from {', '.join(PRESETS)})")
    try:
        return RunConfig.model_validate(_merge(PRESETS[preset_name], document))
    except ValidationError as e:
        raise ConfigError(_describe(e)) from None


def load_config(path: Union[str, Path]) -> RunConfig:
    """Read a JSON config file. Omitted keys take the defaults; unknown keys are errors."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        document = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed config document {path}: {e}") from None
    config = build_config(document)
    logger.debug(f"Loaded config from {path}")
    return config


def save_config(config: RunConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


if __name__ == "__main__":
    config = RunConfig()
    print("Run Configuration:")
    for key, value in config.to_dict().items():
        print(f"  {key}: {value}")

"""Shared fixtures: tiny configs, the synthetic data set and a gradient checker."""
from typing import Callable, List, Optional, Sequence, Tuple

import pytest
import torch

from config import build_config
from fixtures import write_fixture
from painter_core import AttributeSchema, seeded_rng
from painting_data import load_dataset

TINY_CONFIG = {
    "image_size": 16,
    "channel_base": 4,
    "n_downsample": 2,
    "n_res_blocks": 1,
    "n_adain_blocks": 1,
    "mlp_hidden": 8,
    "mlp_layers": 1,
    "disc_base": 4,
    "disc_downsample": 2,
    "stem_kernel": 3,
    "batch_size": 2,
    "total_steps": 4,
    "checkpoint_interval": 2,
    "log_interval": 1,
    "perceptual": {"width_divisor": 16},
    "judge": {"steps": 5, "channels": 4, "batch_size": 4},
}

MINIATURE_CONFIG = {
    "image_size": 8,
    "channel_base": 1,
    "n_downsample": 1,
    "n_res_blocks": 1,
    "n_adain_blocks": 1,
    "mlp_hidden": 4,
    "mlp_layers": 1,
    "disc_base": 1,
    "disc_downsample": 2,
    "stem_kernel": 3,
    "batch_size": 2,
    "perceptual": {"width_divisor": 64},
    "dtype": "float64",
}


@pytest.fixture
def schema():
    return AttributeSchema(
        artists=("cezanne", "monet", "picasso", "vangogh"),
        periods=("early", "late"),
        genres=("cubism", "impressionism", "surrealism"),
    )


@pytest.fixture
def tiny_config():
    return build_config(TINY_CONFIG)


@pytest.fixture
def miniature_config():
    return build_config(MINIATURE_CONFIG)


@pytest.fixture(scope="session")
def fixture_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("fixture")
    write_fixture(root, seed=0, image_size=32)
    return root


@pytest.fixture(scope="session")
def tiny_dataset(fixture_root):
    return load_dataset(fixture_root, TINY_CONFIG["image_size"], flip=True)


def _shifted_losses(loss_fn: Callable[[], torch.Tensor], param: torch.Tensor, index: int,
                    h: float) -> Tuple[float, float]:
    flat = param.data.view(-1)
    original = flat[index].item()
    with torch.no_grad():
        flat[index] = original + h
        plus = loss_fn().item()
        flat[index] = original - h
        minus = loss_fn().item()
        flat[index] = original
    return plus, minus


def check_gradients(loss_fn: Callable[[], torch.Tensor], params: Sequence[torch.Tensor], n_samples: int = 100,
                    h: float = 1e-5, seed: int = 0, floor: float = 1e-6, kink_tolerance: float = 1e-3,
                    max_attempts: Optional[int] = None) -> List[float]:
    """Relative errors between autograd and central differences on sampled entries.

    An entry whose forward and backward one-sided differences disagree by more
    than `kink_tolerance` (relative) straddles a ReLU or clamp kink within `h`;
    it is skipped and another entry is drawn. Raises if fewer than `n_samples`
    smooth entries turn up within `max_attempts` draws.
    """
    params = [p for p in params if p.requires_grad]
    analytic = torch.autograd.grad(loss_fn(), params, allow_unused=True)
    with torch.no_grad():
        base = loss_fn().item()
    max_attempts = max_attempts or 20 * n_samples
    rng = seeded_rng(seed)
    errors: List[float] = []
    for _ in range(max_attempts):
        if len(errors) == n_samples:
            break
        which = int(torch.randint(len(params), (1,), generator=rng))
        param = params[which]
        index = int(torch.randint(param.numel(), (1,), generator=rng))
        plus, minus = _shifted_losses(loss_fn, param, index, h)
        forward, backward = (plus - base) / h, (base - minus) / h
        if abs(forward - backward) > kink_tolerance * max(abs(forward), abs(backward), floor):
            continue
        grad = analytic[which]
        a = 0.0 if grad is None else grad.reshape(-1)[index].item()
        n = (plus - minus) / (2 * h)
        errors.append(abs(a - n) / max(abs(a), abs(n), floor))
    if len(errors) < n_samples:
        raise AssertionError(f"only {len(errors)} of {n_samples} sampled entries were away from a kink")
    return errors


@pytest.fixture
def gradient_checker():
    return check_gradients

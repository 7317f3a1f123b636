"""Alternating min-max training of the asymmetric cycle.

Each step performs one discriminator update (D_y, D_x minimise full_d)
followed by one generator update (G with its condition MLP, and F minimise
full_g). Checkpoints are versioned, checksummed archives; restoring one and
continuing reproduces an uninterrupted run exactly.
"""

import hashlib
import io
import json
import logging
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, NamedTuple, Optional, Tuple, Union

import torch

from conditioning import build_condition_batch
from config import RunConfig, build_config
from losses import (
    LossReport,
    ObjectiveParts,
    ReconstructionTerms,
    Side,
    adversarial_backward_from_logits,
    adversarial_forward_from_logits,
    attribute_regression,
    first_non_finite,
    full_discriminator_objective,
    full_generator_objective,
    reconstruction,
)
from networks import PainterNetworks, set_requires_grad
from painter_core import AttributeSchema, CheckpointError, Mode, NumericalError, seeded_rng, spawn_rng
from painting_data import (
    CONTENT_MANIFEST,
    STYLE_MANIFEST,
    Batch,
    PaintingDataset,
    load_content_manifest,
    load_manifest,
    split_holdout,
)
from perceptual import PerceptualBackbone, style_distance

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"ATTRIBPAINT-CHECKPOINT\n"
CHECKPOINT_VERSION = 1
CHECKPOINT_NAME = "checkpoint.pt"
METRICS_LOG = "metrics.jsonl"

PathLike = Union[str, Path]


def torch_dtype(config: RunConfig) -> torch.dtype:
    return torch.float64 if config.dtype == "float64" else torch.float32


@dataclass
class TrainState:
    """Everything a run needs to continue. The backbone is rebuilt from the seed."""
    config: RunConfig
    schema: AttributeSchema
    networks: PainterNetworks
    backbone: PerceptualBackbone
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    data_rng: torch.Generator
    noise_rng: torch.Generator
    step: int = 0

    @property
    def dtype(self) -> torch.dtype:
        return torch_dtype(self.config)


def _adam(params, config: RunConfig) -> torch.optim.Adam:
    opt = config.optimizer
    return torch.optim.Adam(params, lr=opt.learning_rate, betas=(opt.beta1, opt.beta2), weight_decay=0.0)


def init_state(config: RunConfig, schema: AttributeSchema) -> TrainState:
    """Fresh state. Initialisation, data sampling, genre noise and the
    perceptual backbone each get their own child source of the run seed."""
    root = seeded_rng(config.seed)
    init_rng, data_rng, noise_rng, backbone_rng = (spawn_rng(root) for _ in range(4))
    networks = PainterNetworks.build(config, schema, init_rng)
    backbone = PerceptualBackbone.from_settings(config.perceptual, backbone_rng, torch_dtype(config))
    return TrainState(
        config=config,
        schema=schema,
        networks=networks,
        backbone=backbone,
        opt_g=_adam(networks.generator_parameters(), config),
        opt_d=_adam(networks.discriminator_parameters(), config),
        data_rng=data_rng,
        noise_rng=noise_rng,
    )


class GeneratorOutputs(NamedTuple):
    fake_y: torch.Tensor    # G(x, c)
    x_cycle: torch.Tensor   # F(G(x, c))
    fake_x: torch.Tensor    # F(y)
    y_cycle: torch.Tensor   # G(F(y), c)
    y_idt: torch.Tensor     # G(y, c)
    x_idt: torch.Tensor     # F(x)


def generator_forward(networks: PainterNetworks, x: torch.Tensor, y: torch.Tensor,
                      condition: torch.Tensor) -> GeneratorOutputs:
    g, f = networks.forward_generator, networks.backward_generator
    fake_y = g(x, condition)
    fake_x = f(y)
    return GeneratorOutputs(
        fake_y=fake_y,
        x_cycle=f(fake_y),
        fake_x=fake_x,
        y_cycle=g(fake_x, condition),
        y_idt=g(y, condition),
        x_idt=f(x),
    )


def discriminator_objective(networks: PainterNetworks, x: torch.Tensor, y: torch.Tensor, labels: torch.Tensor,
                            fake_y: torch.Tensor, fake_x: torch.Tensor,
                            config: RunConfig) -> Tuple[torch.Tensor, ObjectiveParts]:
    """full_d on fixed generator outputs."""
    d_y, d_x = networks.style_discriminator, networks.content_discriminator
    real_out = d_y(y)
    fake_out = d_y(fake_y)
    reg_real, _ = attribute_regression(real_out.logits, labels, None, None)
    parts = ObjectiveParts(
        adv_f_d=adversarial_forward_from_logits(real_out.realness, fake_out.realness, Side.DISCRIMINATOR),
        adv_b_d=adversarial_backward_from_logits(d_x(x), d_x(fake_x), Side.DISCRIMINATOR),
        reg_real=reg_real,
    )
    return full_discriminator_objective(parts, config.loss_weights), parts


def generator_objective(networks: PainterNetworks, backbone: PerceptualBackbone, x: torch.Tensor,
                        y: torch.Tensor, labels: torch.Tensor, outputs: GeneratorOutputs,
                        config: RunConfig) -> Tuple[torch.Tensor, ObjectiveParts, ReconstructionTerms]:
    """full_g for the given generator outputs. Style targets pair index-wise
    with the painting batch y."""
    d_y, d_x = networks.style_discriminator, networks.content_discriminator
    fake_out = d_y(outputs.fake_y)
    _, reg_fake = attribute_regression(None, None, fake_out.logits, labels)
    rec_terms = reconstruction(x, y, outputs.x_cycle, outputs.y_cycle, outputs.y_idt, outputs.x_idt)
    parts = ObjectiveParts(
        adv_f_g=adversarial_forward_from_logits(None, fake_out.realness, Side.GENERATOR),
        adv_b_g=adversarial_backward_from_logits(None, d_x(outputs.fake_x), Side.GENERATOR),
        reg_fake=reg_fake,
        rec=rec_terms.total,
        sp=style_distance(backbone, outputs.fake_y, y),
    )
    return full_generator_objective(parts, config.loss_weights), parts, rec_terms


def _ensure_finite(components: Dict[str, torch.Tensor], step: int) -> None:
    name = first_non_finite(components)
    if name is not None:
        raise NumericalError(f"non-finite {name} at step {step}")


def train_step(state: TrainState, batch: Batch, mode: Mode = Mode.TRAIN) -> Tuple[TrainState, LossReport]:
    """One D update then one G update. Mutates and returns `state`."""
    config, networks = state.config, state.networks
    batch = batch.to(state.dtype)
    x, y, labels = batch.content, batch.style, batch.style_labels
    condition = build_condition_batch(labels, mode, state.schema, config.perturbation, state.noise_rng, state.dtype)
    networks.train()
    next_step = state.step + 1

    outputs = generator_forward(networks, x, y, condition)

    d_modules = (networks.style_discriminator, networks.content_discriminator)
    for module in d_modules:
        set_requires_grad(module, True)
    full_d, d_parts = discriminator_objective(
        networks, x, y, labels, outputs.fake_y.detach(), outputs.fake_x.detach(), config
    )
    _ensure_finite({"adv_f_d": d_parts.adv_f_d, "adv_b_d": d_parts.adv_b_d,
                    "reg_real": d_parts.reg_real, "full_d": full_d}, next_step)
    state.opt_d.zero_grad(set_to_none=True)
    full_d.backward()
    state.opt_d.step()

    for module in d_modules:
        set_requires_grad(module, False)
    full_g, g_parts, rec_terms = generator_objective(networks, state.backbone, x, y, labels, outputs, config)
    _ensure_finite({"adv_f": g_parts.adv_f_g, "adv_b": g_parts.adv_b_g, "reg_fake": g_parts.reg_fake,
                    "rec": g_parts.rec, "sp": g_parts.sp, "full_g": full_g}, next_step)
    state.opt_g.zero_grad(set_to_none=True)
    full_g.backward()
    state.opt_g.step()
    for module in d_modules:
        set_requires_grad(module, True)

    state.step = next_step
    parts = replace(g_parts, adv_f_d=d_parts.adv_f_d, adv_b_d=d_parts.adv_b_d, reg_real=d_parts.reg_real)
    return state, LossReport.from_parts(parts, rec_terms, full_g, full_d)


##################################################################################
# Checkpoints
##################################################################################

def snapshot(state: TrainState, path: PathLike) -> Path:
    """Write a versioned, checksummed archive of `state`."""
    path = Path(path)
    networks = state.networks
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": state.config.to_dict(),
        "schema": state.schema.to_dict(),
        "step": state.step,
        "networks": {
            "forward_generator": networks.forward_generator.state_dict(),
            "backward_generator": networks.backward_generator.state_dict(),
            "style_discriminator": networks.style_discriminator.state_dict(),
            "content_discriminator": networks.content_discriminator.state_dict(),
        },
        "condition_mlp": networks.forward_generator.parser.state_dict(),
        "optimizers": {"generator": state.opt_g.state_dict(), "discriminator": state.opt_d.state_dict()},
        "rng": {"data": state.data_rng.get_state(), "noise": state.noise_rng.get_state()},
    }
    buffer = io.BytesIO()
    torch.save(payload, buffer)
    data = buffer.getvalue()
    header = CHECKPOINT_MAGIC + f"{CHECKPOINT_VERSION}\n{hashlib.sha256(data).hexdigest()}\n".encode("ascii")
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "wb") as f:
            f.write(header)
            f.write(data)
        os.replace(tmp, path)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    logger.info(f"Checkpoint saved to {path} (step {state.step})")
    return path


def _read_payload(path: Path) -> dict:
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint archive")
    try:
        version, digest, data = raw[len(CHECKPOINT_MAGIC):].split(b"\n", 2)
        version = int(version)
    except ValueError:
        raise CheckpointError(f"{path}: corrupted checkpoint header") from None
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})")
    if hashlib.sha256(data).hexdigest().encode("ascii") != digest:
        raise CheckpointError(f"{path}: checksum mismatch, archive is corrupted")
    return torch.load(io.BytesIO(data), map_location="cpu", weights_only=True)


def restore(path: PathLike, expected_schema: Optional[AttributeSchema] = None) -> TrainState:
    """Rebuild a TrainState from an archive written by `snapshot`."""
    path = Path(path)
    payload = _read_payload(path)
    config = build_config(payload["config"])
    schema = AttributeSchema.from_dict(payload["schema"])
    if expected_schema is not None:
        axis = schema.mismatched_axis(expected_schema)
        if axis:
            raise CheckpointError(
                f"attribute schema mismatch on axis '{axis}': checkpoint has {list(schema.axis(axis))}, "
                f"data has {list(expected_schema.axis(axis))}"
            )
    state = init_state(config, schema)
    networks = state.networks
    try:
        for name, weights in payload["networks"].items():
            getattr(networks, name).load_state_dict(weights)
        state.opt_g.load_state_dict(payload["optimizers"]["generator"])
        state.opt_d.load_state_dict(payload["optimizers"]["discriminator"])
    except (RuntimeError, KeyError, ValueError) as e:
        raise CheckpointError(f"{path}: weights do not match the configured networks: {e}") from None
    state.data_rng.set_state(payload["rng"]["data"])
    state.noise_rng.set_state(payload["rng"]["noise"])
    state.step = int(payload["step"])
    logger.info(f"Restored checkpoint {path} at step {state.step}")
    return state


##################################################################################
# Fit
##################################################################################

@dataclass
class FitResult:
    state: TrainState
    metrics_path: Path
    checkpoint_path: Path


def build_training_dataset(config: RunConfig, data_root: PathLike,
                           schema: Optional[AttributeSchema] = None) -> PaintingDataset:
    """Load both manifests from `data_root`, holding out a deterministic
    fraction of style entries when configured."""
    data_root = Path(data_root)
    style = load_manifest(data_root / STYLE_MANIFEST, data_root, schema)
    content = load_content_manifest(data_root / CONTENT_MANIFEST, data_root)
    if config.holdout_fraction > 0:
        train_entries, held = split_holdout(style.entries, config.holdout_fraction, config.seed)
        logger.info(f"Holding out {len(held)} of {len(style.entries)} style entries")
        style = replace(style, entries=train_entries)
    return PaintingDataset(style, content, config.image_size, config.flip_augment)


def _truncate_metrics(path: Path, keep: int, source: Optional[Path] = None) -> None:
    """Keep the first `keep` records, read from `source` when given."""
    source = source or path
    lines = source.read_text(encoding="utf-8").splitlines(keepends=True) if source.exists() else []
    if len(lines) < keep:
        logger.warning(f"Metrics log {source} holds {len(lines)} records, expected {keep}")
    path.write_text("".join(lines[:keep]), encoding="utf-8")


def fit(config: RunConfig, dataset: PaintingDataset, out_dir: PathLike,
        resume: Optional[PathLike] = None) -> FitResult:
    """Run train steps up to `config.total_steps`, appending one metrics record
    per step and checkpointing every `checkpoint_interval` steps and at the end."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / METRICS_LOG
    checkpoint_path = out_dir / CHECKPOINT_NAME

    if resume is not None:
        state = restore(resume, expected_schema=dataset.schema)
        if state.config.total_steps != config.total_steps:
            state.config = state.config.with_overrides(total_steps=config.total_steps)
        # a run resumed into a new directory inherits the source run's log
        _truncate_metrics(metrics_path, state.step, Path(resume).parent / METRICS_LOG)
    else:
        state = init_state(config, dataset.schema)
        _truncate_metrics(metrics_path, 0)

    total = state.config.total_steps
    if state.step >= total:
        logger.warning(f"Run already at step {state.step} of {total}; nothing to do")
        if not checkpoint_path.exists():
            snapshot(state, checkpoint_path)
        return FitResult(state, metrics_path, checkpoint_path)

    logger.info(f"Training from step {state.step} to {total}")
    with open(metrics_path, "a", encoding="utf-8") as log:
        while state.step < total:
            batch = dataset.sample_batch(state.data_rng, state.config.batch_size)
            _, report = train_step(state, batch)
            log.write(json.dumps(report.to_record(state.step)) + "\n")
            if state.step % state.config.log_interval == 0:
                logger.info(
                    f"step {state.step}/{total} full_g={report.full_g:.4f} full_d={report.full_d:.4f} "
                    f"rec={report.rec:.4f} reg_fake={report.reg_fake:.4f}"
                )
            if state.step % state.config.checkpoint_interval == 0:
                log.flush()
                snapshot(state, out_dir / f"checkpoint_{state.step:06d}.pt")
    snapshot(state, checkpoint_path)
    logger.info(f"Training finished at step {state.step}")
    return FitResult(state, metrics_path, checkpoint_path)

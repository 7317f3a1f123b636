"""Attribute classification accuracy and Inception Score with a small judge.

One compact convolutional judge, trained only on real style paintings, fills
both the accuracy classifier and the Inception-Score classifier roles. Every
metrics report states that substitution in its header, and absolute numbers
are not comparable with large pretrained judges.
"""

import hashlib
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict
from sklearn.metrics import accuracy_score

from conditioning import build_condition
from config import DEFAULT_IS_SPLITS, JudgeSettings
from networks import StyleDiscriminator
from painter_core import AXES, AttributeSchema, EvaluationError, Mode, check_image_tensor, seeded_rng
from painting_data import load_dataset
from training import restore

logger = logging.getLogger(__name__)

PROBABILITY_FLOOR = 1e-12
EVAL_BATCH_SIZE = 32
JUDGE_NOTE = (
    "desk-scale judge: one small convolutional classifier trained on real style images "
    "replaces the finetuned ResNet-18 (accuracy) and Inception-V3 (IS) judges; "
    "absolute values are not comparable with large-scale results"
)

PathLike = Union[str, Path]


class JudgeClassifier(nn.Module):
    """Strided conv trunk, global average pool, one linear head per axis."""

    def __init__(self, schema: AttributeSchema, axes: Sequence[str] = AXES, channels: int = 16):
        super().__init__()
        for axis in axes:
            if axis not in AXES:
                raise EvaluationError(f"unknown axis '{axis}'")
        self.schema = schema
        self.axes = tuple(axes)
        widths = (channels, 2 * channels, 4 * channels)
        layers, in_dim = [], 3
        for width in widths:
            layers += [nn.Conv2d(in_dim, width, 4, 2, 1), nn.LeakyReLU(0.2)]
            in_dim = width
        self.trunk = nn.Sequential(*layers)
        self.heads = nn.ModuleDict({axis: nn.Linear(in_dim, len(schema.axis(axis))) for axis in self.axes})

    def reset_parameters(self, rng: torch.Generator) -> None:
        with torch.no_grad():
            for module in self.modules():
                if isinstance(module, (nn.Conv2d, nn.Linear)):
                    fan_in = module.weight[0].numel()
                    module.weight.copy_(torch.randn(module.weight.shape, generator=rng) * (2.0 / fan_in) ** 0.5)
                    module.bias.zero_()

    def forward(self, img: torch.Tensor) -> Dict[str, torch.Tensor]:
        h = self.trunk(img).mean(dim=(2, 3))
        return {axis: head(h) for axis, head in self.heads.items()}

    def freeze(self) -> "JudgeClassifier":
        for p in self.parameters():
            p.requires_grad_(False)
        return self.eval()

    @property
    def judge_id(self) -> str:
        digest = hashlib.sha256()
        for name, tensor in self.state_dict().items():
            digest.update(name.encode("utf-8"))
            digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
        return digest.hexdigest()[:12]

    def require_axis(self, axis: str) -> None:
        if axis not in self.axes:
            raise EvaluationError(f"judge has no '{axis}' head (axes: {', '.join(self.axes)})")

    @torch.no_grad()
    def posteriors(self, images: torch.Tensor, axis: str) -> torch.Tensor:
        """(N, classes) softmax posteriors, computed in chunks."""
        self.require_axis(axis)
        chunks = [
            F.softmax(self(images[i:i + EVAL_BATCH_SIZE].float())[axis], dim=1)
            for i in range(0, images.shape[0], EVAL_BATCH_SIZE)
        ]
        return torch.cat(chunks)


def train_judge(images: torch.Tensor, labels: torch.Tensor, schema: AttributeSchema,
                settings: Optional[JudgeSettings] = None, seed: int = 0,
                axes: Sequence[str] = AXES) -> JudgeClassifier:
    """Fit a judge on real style images with (N, 3) label indices and freeze it."""
    settings = settings or JudgeSettings()
    check_image_tensor(images, 1)
    if images.shape[0] != labels.shape[0]:
        raise EvaluationError(f"{images.shape[0]} images but {labels.shape[0]} label rows")
    for axis in axes:
        if axis in AXES and labels[:, AXES.index(axis)].unique().numel() < 2:
            raise EvaluationError(f"degenerate judge data: only one {axis} class present")

    rng = seeded_rng(seed)
    judge = JudgeClassifier(schema, axes, settings.channels)
    judge.reset_parameters(rng)
    optimizer = torch.optim.Adam(judge.parameters(), lr=settings.learning_rate)
    images = images.float()
    columns = [AXES.index(axis) for axis in judge.axes]

    judge.train()
    for _ in range(settings.steps):
        idx = torch.randint(images.shape[0], (settings.batch_size,), generator=rng)
        outputs = judge(images[idx])
        loss = sum(F.cross_entropy(outputs[axis], labels[idx, col]) for axis, col in zip(judge.axes, columns))
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
    judge.freeze()

    for axis, col in zip(judge.axes, columns):
        acc = classification_accuracy(judge, images, labels[:, col], axis)
        logger.info(f"Judge {judge.judge_id} train accuracy on {axis}: {acc:.3f}")
    return judge


def classification_accuracy(judge: JudgeClassifier, images: torch.Tensor, labels: torch.Tensor, axis: str) -> float:
    """Fraction of images whose argmax on the `axis` head equals its label."""
    judge.require_axis(axis)
    if images.shape[0] == 0:
        raise EvaluationError("empty evaluation set")
    if images.shape[0] != labels.shape[0]:
        raise EvaluationError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    predictions = judge.posteriors(images, axis).argmax(dim=1)
    return float(accuracy_score(labels.cpu().numpy(), predictions.cpu().numpy()))


def inception_score_from_posteriors(probs: np.ndarray, splits: int = DEFAULT_IS_SPLITS,
                                     seed: Optional[int] = None) -> Tuple[float, float]:
    """Mean and std over splits of exp(E_x KL(p(k|x) || p(k))).

    Rows are split into contiguous, nearly equal parts; probabilities are
    floored at 1e-12 before logs. With `seed`, rows are shuffled first so a
    set grouped by class does not put one class in each split.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise EvaluationError(f"expected an (N, classes) posterior matrix, got shape {probs.shape}")
    if splits < 1:
        raise EvaluationError("splits must be positive")
    if probs.shape[0] < splits:
        raise EvaluationError(f"evaluation set of {probs.shape[0]} is smaller than splits={splits}")
    if seed is not None:
        probs = probs[np.random.default_rng(seed).permutation(probs.shape[0])]
    scores = []
    for part in np.array_split(probs, splits):
        marginal = part.mean(axis=0, keepdims=True)
        kl = part * (np.log(np.maximum(part, PROBABILITY_FLOOR)) - np.log(np.maximum(marginal, PROBABILITY_FLOOR)))
        scores.append(np.exp(kl.sum(axis=1).mean()))
    return float(np.mean(scores)), float(np.std(scores))


def inception_score(judge: JudgeClassifier, images: torch.Tensor, splits: int = DEFAULT_IS_SPLITS,
                    axis: str = "artist", seed: int = 0) -> Tuple[float, float]:
    """IS of `images` under the judge's `axis` head; rows are shuffled with `seed` before splitting."""
    judge.require_axis(axis)
    if images.shape[0] < splits:
        raise EvaluationError(f"evaluation set of {images.shape[0]} is smaller than splits={splits}")
    return inception_score_from_posteriors(judge.posteriors(images, axis).double().numpy(), splits, seed)


@torch.no_grad()
def head_accuracy(discriminator: StyleDiscriminator, images: torch.Tensor, labels: torch.Tensor,
                  axis: str) -> float:
    """Accuracy of D_y's attribute head for `axis` against (N, 3) label indices."""
    if axis not in AXES:
        raise EvaluationError(f"unknown axis '{axis}'")
    if images.shape[0] == 0:
        raise EvaluationError("empty evaluation set")
    col = AXES.index(axis)
    was_training = discriminator.training
    discriminator.eval()
    param = next(discriminator.parameters())
    predictions = torch.cat([
        discriminator(images[i:i + EVAL_BATCH_SIZE].to(param.dtype)).logits[col].argmax(dim=1)
        for i in range(0, images.shape[0], EVAL_BATCH_SIZE)
    ])
    discriminator.train(was_training)
    return float(accuracy_score(labels[:, col].cpu().numpy(), predictions.cpu().numpy()))


##################################################################################
# Reports
##################################################################################

class MetricRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    metric: str
    axis: str
    direction: str
    value: float
    std: Optional[float] = None
    judge_id: str
    checkpoint_id: str
    set_size: int


class MetricsReport(BaseModel):
    judge_id: str
    checkpoint_id: str
    note: str = JUDGE_NOTE
    axes: List[str]
    splits: int
    rows: List[MetricRow] = []

    def accuracy_rows(self, axis: str) -> List[MetricRow]:
        return [r for r in self.rows if r.metric == "accuracy" and r.axis == axis]

    def write(self, path: PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2) + "\n", encoding="utf-8")
        logger.info(f"Metrics report written to {path}")
        return path

    @classmethod
    def read(cls, path: PathLike) -> "MetricsReport":
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))


def checkpoint_id(path: PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:12]


@torch.no_grad()
def stylize_direction(generator, content: torch.Tensor, schema: AttributeSchema,
                      targets: Sequence[Tuple[str, str, str]], dtype: torch.dtype) -> Tuple[torch.Tensor, torch.Tensor]:
    """Every content image under every target triple in TEST mode.

    Returns the generated images (float32) and their (N, 3) target indices.
    """
    generator.eval()
    images, labels = [], []
    content = content.to(dtype)
    for artist, period, genre in targets:
        condition = build_condition(artist, period, genre, Mode.TEST, schema, None)
        for i in range(0, content.shape[0], EVAL_BATCH_SIZE):
            chunk = content[i:i + EVAL_BATCH_SIZE]
            images.append(generator(chunk, condition.concatenated.to(dtype)).float())
            labels.append(torch.tensor([schema.indices(artist, period, genre)] * chunk.shape[0]))
    return torch.cat(images), torch.cat(labels)


def evaluate_checkpoint(checkpoint: PathLike, data_root: PathLike, axes: Sequence[str] = ("artist",),
                        splits: int = DEFAULT_IS_SPLITS, seed: Optional[int] = None) -> MetricsReport:
    """Train a judge on the real style set, stylise every content image toward
    each artist and score the outputs.

    One direction per artist; its targets are the (period, genre) pairs that
    artist has in the style manifest. Accuracy is reported per axis and
    direction, IS once over all generated images.
    """
    for axis in axes:
        if axis not in AXES:
            raise EvaluationError(f"unknown axis '{axis}'")
    state = restore(checkpoint)
    config, schema = state.config, state.schema
    dataset = load_dataset(data_root, config.image_size, flip=False, schema=schema)
    seed = config.seed if seed is None else seed
    judge = train_judge(dataset.style_images, dataset.style_labels, schema, config.judge, seed, axes=AXES)
    ckpt_id = checkpoint_id(checkpoint)
    report = MetricsReport(judge_id=judge.judge_id, checkpoint_id=ckpt_id, axes=list(axes), splits=splits)
    logger.info(f"Evaluating checkpoint {ckpt_id} with judge {judge.judge_id}: {JUDGE_NOTE}")

    generator = state.networks.forward_generator
    all_images = []
    for artist in schema.artists:
        targets = sorted({e.labels for e in dataset.style_entries if e.artist == artist})
        if not targets:
            targets = [(artist, schema.periods[0], schema.genres[0])]
        images, labels = stylize_direction(generator, dataset.content_images, schema, targets, state.dtype)
        all_images.append(images)
        direction = f"photo2{artist}"
        for axis in axes:
            value = classification_accuracy(judge, images, labels[:, AXES.index(axis)], axis)
            report.rows.append(MetricRow(
                metric="accuracy", axis=axis, direction=direction, value=value,
                judge_id=judge.judge_id, checkpoint_id=ckpt_id, set_size=images.shape[0],
            ))
            logger.info(f"{direction} {axis} accuracy: {value:.3f} ({images.shape[0]} images)")

    generated = torch.cat(all_images)
    # generated images are grouped by artist; shuffled before splitting
    mean, std = inception_score(judge, generated, splits, seed=seed)
    report.rows.append(MetricRow(
        metric="inception_score", axis="artist", direction="all", value=mean, std=std,
        judge_id=judge.judge_id, checkpoint_id=ckpt_id, set_size=generated.shape[0],
    ))
    logger.info(f"Inception score: {mean:.3f} +/- {std:.3f}")
    return report

"""Objective terms for the asymmetric cycle.

All functions are pure. Discriminator-side adversarial losses are the
negated log-likelihood form (minimising them maximises the classical
objective); generator-side losses are the non-saturating -log D(fake).
Realness scores go through a sigmoid of logits clamped to +/-30.
"""

import math
from dataclasses import asdict, dataclass, fields
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple, Union

import torch
import torch.nn.functional as F

from config import LossWeights
from painter_core import PreconditionError, ShapeError

LOGIT_CLAMP = 30.0

Number = Union[float, torch.Tensor]


class Side(Enum):
    GENERATOR = "generator"
    DISCRIMINATOR = "discriminator"


def _check_probabilities(name: str, scores: torch.Tensor) -> None:
    if not bool(((scores > 0) & (scores < 1)).all()):
        raise PreconditionError(f"{name} scores must lie strictly inside (0, 1)")


def realness_probability(logits: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP))


def adversarial_forward(d_real: Optional[torch.Tensor], d_fake: torch.Tensor,
                        side: Union[Side, str]) -> torch.Tensor:
    """Adversarial loss on D_y probabilities for real paintings and G(x, c)."""
    side = Side(side)
    _check_probabilities("fake", d_fake)
    if side is Side.GENERATOR:
        return -torch.log(d_fake).mean()
    if d_real is None:
        raise PreconditionError("discriminator side needs real scores")
    _check_probabilities("real", d_real)
    return -(torch.log(d_real).mean() + torch.log1p(-d_fake).mean())


def adversarial_backward(d_real: Optional[torch.Tensor], d_fake: torch.Tensor,
                         side: Union[Side, str]) -> torch.Tensor:
    """Same form as the forward loss, on D_x scores for x (real) and F(y) (fake)."""
    return adversarial_forward(d_real, d_fake, side)


def adversarial_forward_from_logits(real_logits: Optional[torch.Tensor], fake_logits: torch.Tensor,
                                    side: Union[Side, str]) -> torch.Tensor:
    """adversarial_forward(sigmoid(clamp(real)), sigmoid(clamp(fake))) computed in log space."""
    side = Side(side)
    fake = fake_logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
    if side is Side.GENERATOR:
        return -F.logsigmoid(fake).mean()
    if real_logits is None:
        raise PreconditionError("discriminator side needs real scores")
    real = real_logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
    # log(1 - sigmoid(z)) == logsigmoid(-z)
    return -(F.logsigmoid(real).mean() + F.logsigmoid(-fake).mean())


def adversarial_backward_from_logits(real_logits: Optional[torch.Tensor], fake_logits: torch.Tensor,
                                     side: Union[Side, str]) -> torch.Tensor:
    return adversarial_forward_from_logits(real_logits, fake_logits, side)


def attribute_cross_entropy(logits: Sequence[torch.Tensor], labels: torch.Tensor) -> torch.Tensor:
    """Sum over artist / period / genre of the batch-mean softmax cross-entropy.

    `labels` is a (B, 3) integer tensor of class indices.
    """
    if len(logits) != 3 or labels.dim() != 2 or labels.shape[1] != 3:
        raise ShapeError("expected three logit tensors and (B, 3) labels")
    total = 0.0
    for axis, axis_logits in enumerate(logits):
        target = labels[:, axis].long()
        n_classes = axis_logits.shape[-1]
        if bool(((target < 0) | (target >= n_classes)).any()):
            raise PreconditionError(f"label out of range for axis {axis} with {n_classes} classes")
        total = total + F.cross_entropy(axis_logits, target)
    return total


def attribute_regression(real_logits: Optional[Sequence[torch.Tensor]], real_labels: Optional[torch.Tensor],
                         fake_logits: Optional[Sequence[torch.Tensor]], fake_labels: Optional[torch.Tensor],
                         ) -> Tuple[torch.Tensor, torch.Tensor]:
    """(reg_real, reg_fake): real paintings scored against their own labels,
    generated images against the labels they were conditioned on. A side
    passed as None contributes zero."""
    zero = torch.zeros(())
    reg_real = attribute_cross_entropy(real_logits, real_labels) if real_logits is not None else zero
    reg_fake = attribute_cross_entropy(fake_logits, fake_labels) if fake_logits is not None else zero
    return reg_real, reg_fake


@dataclass
class ReconstructionTerms:
    cycle_x: torch.Tensor
    cycle_y: torch.Tensor
    idt_y: torch.Tensor
    idt_x: torch.Tensor

    @property
    def total(self) -> torch.Tensor:
        return self.cycle_x + self.cycle_y + self.idt_y + self.idt_x


def _l1(prediction: torch.Tensor, target: torch.Tensor, name: str) -> torch.Tensor:
    if prediction.shape != target.shape:
        raise ShapeError(f"{name}: shape {tuple(prediction.shape)} does not match {tuple(target.shape)}")
    return F.l1_loss(prediction, target)


def reconstruction(x: torch.Tensor, y: torch.Tensor, x_hat_cycle: torch.Tensor, y_hat_cycle: torch.Tensor,
                   y_idt: torch.Tensor, x_idt: torch.Tensor) -> ReconstructionTerms:
    """Element-mean L1 of F(G(x,c))-x, G(F(y),c)-y, G(y,c)-y and F(x)-x."""
    return ReconstructionTerms(
        cycle_x=_l1(x_hat_cycle, x, "F(G(x,c))"),
        cycle_y=_l1(y_hat_cycle, y, "G(F(y),c)"),
        idt_y=_l1(y_idt, y, "G(y,c)"),
        idt_x=_l1(x_idt, x, "F(x)"),
    )


@dataclass
class ObjectiveParts:
    """Component values feeding the full objective; absent terms are zero."""
    adv_f_g: Number = 0.0
    adv_b_g: Number = 0.0
    adv_f_d: Number = 0.0
    adv_b_d: Number = 0.0
    reg_real: Number = 0.0
    reg_fake: Number = 0.0
    rec: Number = 0.0
    sp: Number = 0.0


def full_generator_objective(parts: ObjectiveParts, weights: LossWeights) -> Number:
    return (
        parts.adv_f_g
        + parts.adv_b_g
        + weights.lambda_rec * parts.rec
        + weights.lambda_reg * parts.reg_fake
        + weights.lambda_s * parts.sp
    )


def full_discriminator_objective(parts: ObjectiveParts, weights: LossWeights) -> Number:
    return parts.adv_f_d + parts.adv_b_d + weights.lambda_reg * parts.reg_real


def full_objective(parts: ObjectiveParts, weights: LossWeights) -> Tuple[Number, Number]:
    """(full_g, full_d) with adversarial terms at unit weight."""
    return full_generator_objective(parts, weights), full_discriminator_objective(parts, weights)


def _scalar(value: Number) -> float:
    return float(value.detach()) if isinstance(value, torch.Tensor) else float(value)


@dataclass(frozen=True)
class LossReport:
    """Per-step scalars. adv_f / adv_b are the generator-side values."""
    adv_f: float
    adv_b: float
    adv_f_d: float
    adv_b_d: float
    reg_real: float
    reg_fake: float
    sp: float
    rec: float
    rec_cycle_x: float
    rec_cycle_y: float
    rec_idt_y: float
    rec_idt_x: float
    full_g: float
    full_d: float

    @classmethod
    def from_parts(cls, parts: ObjectiveParts, rec_terms: ReconstructionTerms,
                   full_g: Number, full_d: Number) -> "LossReport":
        return cls(
            adv_f=_scalar(parts.adv_f_g),
            adv_b=_scalar(parts.adv_b_g),
            adv_f_d=_scalar(parts.adv_f_d),
            adv_b_d=_scalar(parts.adv_b_d),
            reg_real=_scalar(parts.reg_real),
            reg_fake=_scalar(parts.reg_fake),
            sp=_scalar(parts.sp),
            rec=_scalar(rec_terms.total),
            rec_cycle_x=_scalar(rec_terms.cycle_x),
            rec_cycle_y=_scalar(rec_terms.cycle_y),
            rec_idt_y=_scalar(rec_terms.idt_y),
            rec_idt_x=_scalar(rec_terms.idt_x),
            full_g=_scalar(full_g),
            full_d=_scalar(full_d),
        )

    def to_record(self, step: int) -> Dict[str, float]:
        return {"step": step, **asdict(self)}

    @classmethod
    def field_names(cls) -> Tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


def first_non_finite(components: Dict[str, Number]) -> Optional[str]:
    """Name of the first component whose value is NaN or infinite."""
    for name, value in components.items():
        if not math.isfinite(_scalar(value)):
            return name
    return None

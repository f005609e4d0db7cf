"""The six loss terms and their weighted combination.

All reductions are means over tensor elements so magnitudes do not depend
on image resolution or batch size. The adversarial term is the quantity the
discriminators ascend and the encoder/generators descend; cycle and encoder
terms are plain L1 means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import NumericError, ShapeError

LOG_GUARD = 1e-7  # probabilities are clamped to [LOG_GUARD, 1 - LOG_GUARD] before log


@dataclass(frozen=True)
class LossWeights:
    """Relative importance of the cycle and encoder terms (adversarial weight is 1)."""

    cycle_weight: float = 10.0
    encoder_weight: float = 1.0

    def validate(self) -> None:
        if self.cycle_weight < 0 or self.encoder_weight < 0:
            raise NumericError(
                f"loss weights must be nonnegative, got {self.cycle_weight}, {self.encoder_weight}"
            )


@dataclass(frozen=True)
class LossReport:
    """The six scalar terms of one step plus their weighted total."""

    adv_a: float
    adv_b: float
    cyc_a: float
    cyc_b: float
    enc_a: float
    enc_b: float
    total: float

    CSV_FIELDS = ("step", "adv_a", "adv_b", "cyc_a", "cyc_b", "enc_a", "enc_b", "total")

    def to_row(self, step: int) -> dict:
        return {
            "step": step,
            "adv_a": self.adv_a, "adv_b": self.adv_b,
            "cyc_a": self.cyc_a, "cyc_b": self.cyc_b,
            "enc_a": self.enc_a, "enc_b": self.enc_b,
            "total": self.total,
        }


def _check_finite(value, name: str) -> None:
    if isinstance(value, torch.Tensor):
        ok = bool(torch.isfinite(value).all())
    else:
        ok = math.isfinite(value)
    if not ok:
        raise NumericError(f"loss term {name} is not finite: {value}")


def adversarial_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """mean log(real) + mean log(1 - fake); ascended by D, descended by E/G."""
    for name, scores in (("real", real_scores), ("fake", fake_scores)):
        if not bool(((scores >= 0) & (scores <= 1)).all()):
            raise NumericError(f"{name} scores must be probabilities in [0, 1]")
    real = real_scores.clamp(LOG_GUARD, 1.0 - LOG_GUARD)
    fake = fake_scores.clamp(LOG_GUARD, 1.0 - LOG_GUARD)
    return torch.log(real).mean() + torch.log(1.0 - fake).mean()


def _l1_mean(x: torch.Tensor, y: torch.Tensor, who: str) -> torch.Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"{who} inputs must share a shape, got {tuple(x.shape)} vs {tuple(y.shape)}")
    return (x - y).abs().mean()


def cycle_loss(original: torch.Tensor, reconstructed: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference between an image and its translate-and-return."""
    return _l1_mean(original, reconstructed, "cycle_loss")


def encoder_loss(rep_via_a: torch.Tensor, rep_via_b: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference between the two re-encoded renderings of one source."""
    return _l1_mean(rep_via_a, rep_via_b, "encoder_loss")


def full_objective(adv_a, adv_b, cyc_a, cyc_b, enc_a, enc_b,
                   weights: LossWeights = LossWeights()):
    """Weighted sum of the six terms; works on floats and on scalar tensors."""
    weights.validate()
    for name, value in (("adv_a", adv_a), ("adv_b", adv_b), ("cyc_a", cyc_a),
                        ("cyc_b", cyc_b), ("enc_a", enc_a), ("enc_b", enc_b)):
        _check_finite(value, name)
    a, b = weights.cycle_weight, weights.encoder_weight
    return adv_a + adv_b + a * cyc_a + a * cyc_b + b * enc_a + b * enc_b


def loss_report(adv_a, adv_b, cyc_a, cyc_b, enc_a, enc_b,
                weights: LossWeights = LossWeights()) -> LossReport:
    """Assemble a LossReport from scalar terms (tensors are detached to floats)."""
    vals = [float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
            for v in (adv_a, adv_b, cyc_a, cyc_b, enc_a, enc_b)]
    total = float(full_objective(*vals, weights=weights))
    return LossReport(*vals, total=total)

"""Concordance correlation coefficient, VAD evaluation reports, and the weighted CCC loss."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

DIMENSIONS = ("valence", "arousal", "dominance")


@dataclass(frozen=True)
class TaskWeights:
    w_v: float = 0.1
    w_a: float = 0.5
    w_d: float = 0.4

    def __post_init__(self):
        if min(self.w_v, self.w_a, self.w_d) < 0:
            raise ValueError("task weights must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.w_v, self.w_a, self.w_d])

    @classmethod
    def parse(cls, text: str) -> "TaskWeights":
        parts = [float(p) for p in text.split(",")]
        if len(parts) != 3:
            raise ValueError(f"expected three comma-separated weights, got {text!r}")
        return cls(*parts)


@dataclass(frozen=True)
class CccReport:
    valence: float
    arousal: float
    dominance: float
    mean: float
    degenerate_flags: tuple = field(default=())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["degenerate_flags"] = list(self.degenerate_flags)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d) -> "CccReport":
        return cls(d["valence"], d["arousal"], d["dominance"], d["mean"],
                   tuple(d.get("degenerate_flags", ())))


def _moments(pred, truth):
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise ValueError(f"ccc needs two equal-length vectors, got {p.shape} and {t.shape}")
    if p.size < 2:
        raise ValueError("ccc needs at least two points")
    mp, mt = p.mean(), t.mean()
    dp, dt = p - mp, t - mt
    vp, vt = np.mean(dp * dp), np.mean(dt * dt)
    cov = np.mean(dp * dt)
    return p, t, mp, mt, vp, vt, cov


def ccc_with_flag(pred, truth):
    """CCC with population moments, plus a flag for constant input.

    The flag is raised when either vector is constant. If both are, the
    coefficient is undefined and 0.0 is returned.
    """
    _, _, mp, mt, vp, vt, cov = _moments(pred, truth)
    denom = vp + vt + (mp - mt) ** 2
    degenerate = bool(vp == 0.0 or vt == 0.0)
    if denom == 0.0:
        return 0.0, True
    return float(2.0 * cov / denom), degenerate


def ccc(pred, truth) -> float:
    return ccc_with_flag(pred, truth)[0]


def ccc_and_grad(pred, truth):
    """CCC and its gradient with respect to ``pred`` (zero where undefined)."""
    p, t, mp, mt, vp, vt, cov = _moments(pred, truth)
    n = p.size
    denom = vp + vt + (mp - mt) ** 2
    if denom == 0.0:
        return 0.0, np.zeros(n)
    value = 2.0 * cov / denom
    g = 2.0 * (t - mt) / (n * denom) - 4.0 * cov * (p - mt) / (n * denom**2)
    return float(value), g


def _as_matrix(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"{name} must be N x 3, got shape {a.shape}")
    return a


def evaluate(preds, truths) -> CccReport:
    preds, truths = _as_matrix(preds, "preds"), _as_matrix(truths, "truths")
    if preds.shape != truths.shape:
        raise ValueError(f"shape mismatch: {preds.shape} vs {truths.shape}")
    scores, flags = [], []
    for j, dim in enumerate(DIMENSIONS):
        c, flag = ccc_with_flag(preds[:, j], truths[:, j])
        scores.append(c)
        if flag:
            flags.append(dim)
    return CccReport(*scores, sum(scores) / 3.0, tuple(flags))


def multitask_loss(preds, truths, weights: TaskWeights | None = None) -> float:
    """Weighted sum of (1 - CCC) over valence, arousal and dominance."""
    return multitask_loss_and_grad(preds, truths, weights)[0]


def multitask_loss_and_grad(preds, truths, weights: TaskWeights | None = None):
    weights = weights or TaskWeights()
    preds, truths = _as_matrix(preds, "preds"), _as_matrix(truths, "truths")
    w = weights.as_array()
    loss = 0.0
    grad = np.zeros_like(preds)
    for j in range(3):
        c, g = ccc_and_grad(preds[:, j], truths[:, j])
        loss += w[j] * (1.0 - c)
        grad[:, j] = -w[j] * g
    return float(loss), grad

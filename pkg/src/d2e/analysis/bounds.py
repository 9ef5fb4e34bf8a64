"""Soft accuracy, divergences between predictors, and the KL + TV accuracy-gap bound.

For a teacher ``f_X`` evaluated on direct code and a student ``f_S`` on event
code, the cross-domain soft-accuracy gap obeys

    |acc_X(f_X) - acc_S(f_S)| <= sqrt(E_x[KL(f_X(.|x) || f_S(.|x))] / 2) + 2 TV(X, S)
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..autodiff import EPS
from ..data import Dataset
from ..encoders import Encoder, encode_direct
from ..network import SpikingNetwork, predict_probs


class UnsupportedModeError(ValueError):
    pass


def _weights(data: Dataset) -> np.ndarray:
    if len(data) == 0:
        raise ValueError("empty dataset")
    if data.weights is not None:
        return np.asarray(data.weights, dtype=np.float64)
    return np.full(len(data), 1.0 / len(data))


def soft_accuracy_from_probs(probs: np.ndarray, labels, weights: np.ndarray | None = None, label_dist: np.ndarray | None = None) -> float:
    """``E_x E_{y|x} f(y|x)``. With one-hot labels this is the mean true-class probability."""
    probs = np.asarray(probs, dtype=np.float64)
    if len(probs) == 0:
        raise ValueError("soft accuracy of an empty dataset is undefined")
    if label_dist is None:
        per_x = probs[np.arange(len(probs)), np.asarray(labels, dtype=np.int64)]
    else:
        per_x = (np.asarray(label_dist) * probs).sum(axis=1)
    if weights is None:
        return float(per_x.mean())
    return float((np.asarray(weights) * per_x).sum())


def soft_accuracy(net: SpikingNetwork, data: Dataset, encoder: Encoder, T: int, label_dist: np.ndarray | None = None) -> float:
    probs = predict_probs(net, data.x, encoder, T)
    return soft_accuracy_from_probs(probs, data.labels, _weights(data), label_dist)


def kl_rows(p: np.ndarray, q: np.ndarray, eps: float = EPS) -> np.ndarray:
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    # 0 log 0 = 0; only q is floored, so tiny p entries keep their exact weight
    live = p > 0
    logp = np.log(np.where(live, p, 1.0))
    return np.where(live, p * (logp - np.log(np.maximum(q, eps))), 0.0).sum(axis=-1)


def expected_kl(teacher: SpikingNetwork, student: SpikingNetwork, data: Dataset, encoder: Encoder, T: int, teacher_encoder: Encoder = encode_direct) -> float:
    """Dataset mean of KL(teacher(direct x) || student(encoder x)) in nats."""
    w = _weights(data)
    p = predict_probs(teacher, data.x, teacher_encoder, T)
    q = predict_probs(student, data.x, encoder, T)
    return float((w * kl_rows(p, q)).sum())


def tv_exact(p, q) -> float:
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"support mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


def pinsker_check(p, q) -> tuple[float, float, bool]:
    """(TV, sqrt(KL/2), TV <= sqrt(KL/2))."""
    tv = tv_exact(p, q)
    bound = math.sqrt(max(float(kl_rows(p, q)), 0.0) / 2.0)
    return tv, bound, tv <= bound + 1e-15


def input_tv_exact(data: Dataset, encoder: Encoder, T: int) -> float:
    """TV between direct-coded and event-coded input laws on the [T, C, H, W] embedding.

    Only defined when ``data`` enumerates a finite input space with weights.
    """
    if not data.enumerable:
        raise UnsupportedModeError("exact TV needs a finite, enumerated input space (dataset weights)")
    x = data.x
    mass: dict[bytes, list[float]] = {}
    for side, seq in enumerate((encode_direct(x, T), encoder(x, T))):
        for i, w in enumerate(data.weights):
            key = np.ascontiguousarray(seq[:, i]).tobytes()
            mass.setdefault(key, [0.0, 0.0])[side] += float(w)
    return 0.5 * sum(abs(a - b) for a, b in mass.values())


@dataclass
class BoundReport:
    epoch: int
    kl_mean: float
    tv_estimate: float
    acc_gap: float
    rhs: float
    holds: bool

    def to_dict(self) -> dict:
        return asdict(self)


BOUND_COLUMNS = ("epoch", "kl_mean", "tv_estimate", "acc_gap", "rhs", "holds")


def bound_rhs(kl_mean: float, tv: float) -> float:
    return math.sqrt(max(kl_mean, 0.0) / 2.0) + 2.0 * tv


def make_report(epoch: int, kl_mean: float, acc_gap: float, tv: float) -> BoundReport:
    rhs = bound_rhs(kl_mean, tv)
    return BoundReport(epoch, kl_mean, tv, acc_gap, rhs, bool(rhs >= acc_gap))


def parse_tv_mode(mode: str) -> tuple[str, float | None]:
    """``exact`` | ``constant:<c>`` | ``fit``."""
    if mode in ("exact", "fit"):
        return mode, None
    if mode.startswith("constant:"):
        c = float(mode.split(":", 1)[1])
        if not 0.0 <= c <= 1.0:
            raise ValueError(f"TV constant must lie in [0, 1], got {c}")
        return "constant", c
    raise ValueError(f"unknown tv mode {mode!r}; expected exact, constant:<c> or fit")


def theorem1_report(
    teacher: SpikingNetwork,
    student: SpikingNetwork,
    data: Dataset,
    encoder: Encoder,
    T: int,
    tv_mode: str = "exact",
    epoch: int = 0,
) -> BoundReport:
    """Bound quantities for one (teacher, student) pair.

    ``fit`` needs a whole trajectory; use :func:`fit_tv_constant` and
    :func:`bound_trajectory` for it.
    """
    kind, c = parse_tv_mode(tv_mode)
    if kind == "fit":
        raise UnsupportedModeError("tv mode 'fit' is trajectory-level; use fit_tv_constant")
    w = _weights(data)
    p = predict_probs(teacher, data.x, encode_direct, T)
    q = predict_probs(student, data.x, encoder, T)
    kl = float((w * kl_rows(p, q)).sum())
    gap = abs(soft_accuracy_from_probs(p, data.labels, w) - soft_accuracy_from_probs(q, data.labels, w))
    tv = input_tv_exact(data, encoder, T) if kind == "exact" else c
    return make_report(epoch, kl, gap, tv)


def fit_tv_constant(kl_means: Sequence[float], gaps: Sequence[float]) -> float:
    """Smallest ``c >= 0`` with ``sqrt(kl/2) + 2c >= gap`` at every epoch."""
    kl = np.asarray(kl_means, dtype=np.float64)
    gap = np.asarray(gaps, dtype=np.float64)
    if kl.shape != gap.shape or kl.size == 0:
        raise ValueError("need equal-length, non-empty KL and gap series")
    need = (gap - np.sqrt(np.maximum(kl, 0.0) / 2.0)) / 2.0
    return float(max(0.0, need.max()))


def bound_trajectory(kl_means: Sequence[float], gaps: Sequence[float], tv: float) -> list[BoundReport]:
    return [make_report(i, float(k), float(g), tv) for i, (k, g) in enumerate(zip(kl_means, gaps))]


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("pearson needs two equal-length series of length >= 2")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(dx @ dx)), math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("correlation is undefined for a constant series")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))

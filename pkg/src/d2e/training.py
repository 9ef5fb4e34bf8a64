"""Direct pretraining, task-specific finetuning (TSF) and self-distillation (SKD).

All three share one loop: Nesterov SGD with linear warmup and cosine decay,
batch-mean losses, a seed-derived shuffle per epoch, and an end-of-epoch
evaluation that fills one :class:`EpochRecord`.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import EPS, Tape, Tensor, absolute, as_tensor, cross_entropy, kl_divergence, mean, softmax, square
from .data import Dataset
from .encoders import Encoder, encode_direct
from .network import SpikingNetwork, predict_probs, run_unrolled

logger = logging.getLogger(__name__)

DISTILL_LOSSES = ("forward_kl", "reverse_kl", "jensen_shannon", "mse_softmax", "l1_softmax")
LOG_COLUMNS = (
    "epoch",
    "loss",
    "ce",
    "distill",
    "acc_dir_soft",
    "acc_dir_hard",
    "acc_evt_soft",
    "acc_evt_hard",
    "kl_mean",
    "lr",
)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


class DistributionError(ValueError):
    """A probability row is negative or does not sum to one."""


@dataclass(frozen=True)
class TransferConfig:
    alpha: float = 0.4
    distill_loss: str = "forward_kl"
    epochs: int = 1
    batch_size: int = 32
    # base_lr = lr_ref * batch_size / 256
    lr_ref: float = 0.1
    momentum: float = 0.9
    warmup_epochs: int = 0
    seed: int = 0
    T: int = 8
    temperature: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.distill_loss not in DISTILL_LOSSES:
            raise ValueError(f"distill_loss must be one of {DISTILL_LOSSES}, got {self.distill_loss!r}")
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ValueError("epochs and warmup_epochs must be >= 0")
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")

    @property
    def base_lr(self) -> float:
        return self.lr_ref * self.batch_size / 256.0


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    ce: float
    distill: float
    acc_dir_soft: float
    acc_dir_hard: float
    acc_evt_soft: float
    acc_evt_hard: float
    kl_mean: float
    lr: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(LOG_COLUMNS)
            for r in self.records:
                writer.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in LOG_COLUMNS[1:]])

    def to_dicts(self) -> list[dict]:
        return [asdict(r) for r in self.records]


# ---------------------------------------------------------------- optimizer


def sgd_step(params, grads, momentum_state: list, lr: float, momentum: float = 0.9):
    """One Nesterov step, in place: ``buf = mu buf + g; p -= lr (g + mu buf)``.

    ``momentum_state`` holds one buffer (or ``None`` before the first step)
    per parameter and is updated in place. Returns ``params``.
    """
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        buf = momentum_state[i]
        buf = g.copy() if buf is None else momentum * buf + g
        momentum_state[i] = buf
        p -= lr * (g + momentum * buf)
    return params


class SGD:
    def __init__(self, params: Sequence[Tensor], momentum: float = 0.9):
        self.params = list(params)
        self.momentum = momentum
        self.state: list[np.ndarray | None] = [None] * len(self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        sgd_step([p.data for p in self.params], [p.grad for p in self.params], self.state, lr, self.momentum)

    def grad_norm(self) -> float:
        return math.sqrt(sum(float((p.grad**2).sum()) for p in self.params if p.grad is not None))


def lr_schedule(epoch: int, cfg: TransferConfig) -> float:
    """Linear warmup from base_lr/10, then half-cosine down to 0 at the last epoch."""
    if not 0 <= epoch < max(cfg.epochs, 1):
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    base = cfg.base_lr
    if epoch < cfg.warmup_epochs:
        return base / 10.0 + (base - base / 10.0) * epoch / cfg.warmup_epochs
    span = cfg.epochs - 1 - cfg.warmup_epochs
    if span <= 0:
        return base
    progress = (epoch - cfg.warmup_epochs) / span
    return max(0.0, base * 0.5 * (1.0 + math.cos(math.pi * progress)))


# ---------------------------------------------------------------- losses


def check_distribution(p: np.ndarray, what: str, tol: float = 1e-6) -> None:
    if p.ndim != 2 or (p < -tol).any() or not np.allclose(p.sum(axis=1), 1.0, atol=tol):
        raise DistributionError(f"{what} rows must be probability distributions")


def distillation_loss(variant: str, teacher_probs, student_probs: Tensor) -> Tensor:
    """Divergence between frozen teacher rows and student rows (batch mean).

    The teacher side never receives gradient.
    """
    p = Tensor(teacher_probs.data if isinstance(teacher_probs, Tensor) else teacher_probs)
    q = as_tensor(student_probs)
    check_distribution(p.data, "teacher_probs")
    check_distribution(q.data, "student_probs")
    if p.shape != q.shape:
        raise DistributionError(f"teacher {p.shape} and student {q.shape} shapes differ")
    if variant == "forward_kl":
        return kl_divergence(p, q)
    if variant == "reverse_kl":
        return kl_divergence(q, p)
    if variant == "jensen_shannon":
        m = (p + q) * 0.5
        return kl_divergence(p, m) * 0.5 + kl_divergence(q, m) * 0.5
    if variant == "mse_softmax":
        return mean(square(q - p))
    if variant == "l1_softmax":
        return mean(absolute(q - p))
    raise ValueError(f"unknown distillation loss {variant!r}; expected one of {DISTILL_LOSSES}")


def tempered(logits_per_step: Tensor, temperature: float) -> Tensor:
    z = mean(logits_per_step, axis=0)
    return softmax(z if temperature == 1.0 else z * (1.0 / temperature))


# ---------------------------------------------------------------- evaluation


def _accuracies(probs: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    rows = np.arange(len(labels))
    return float(probs[rows, labels].mean()), float((probs.argmax(axis=1) == labels).mean())


def _kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return (p * (np.log(np.maximum(p, EPS)) - np.log(np.maximum(q, EPS)))).sum(axis=1)


def evaluate(net: SpikingNetwork, data: Dataset, encoder: Encoder | None, T: int, reference: np.ndarray | None = None):
    """(acc_dir_soft, acc_dir_hard, acc_evt_soft, acc_evt_hard, kl_mean)."""
    x, y = data.x, data.labels.astype(np.int64)
    p_dir = predict_probs(net, x, encode_direct, T)
    dir_soft, dir_hard = _accuracies(p_dir, y)
    if encoder is None:
        return dir_soft, dir_hard, math.nan, math.nan, math.nan
    p_evt = predict_probs(net, x, encoder, T)
    evt_soft, evt_hard = _accuracies(p_evt, y)
    kl = float(_kl_rows(reference, p_evt).mean()) if reference is not None else math.nan
    return dir_soft, dir_hard, evt_soft, evt_hard, kl


# ---------------------------------------------------------------- training loop

EpochHook = Callable[[int, SpikingNetwork], None]


def _fit(
    net: SpikingNetwork,
    data: Dataset,
    cfg: TransferConfig,
    encoder: Encoder,
    eval_encoder: Encoder | None,
    teacher_probs: np.ndarray | None,
    alpha: float,
    eval_data: Dataset | None,
    eval_reference: np.ndarray | None,
    on_epoch: EpochHook | None,
) -> TrainLog:
    log = TrainLog()
    opt = SGD(net.parameters(), cfg.momentum)
    x_all, y_all = data.x, data.labels.astype(np.int64)
    n = len(data)
    eval_data = eval_data or data
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        tot_loss = tot_ce = tot_distill = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            opt.zero_grad()
            with Tape() as tape:
                logits = run_unrolled(net, encoder(x_all[idx], cfg.T))
                probs = softmax(mean(logits, axis=0))
                ce = cross_entropy(probs, y_all[idx])
                if teacher_probs is None:
                    loss, distill = ce, None
                else:
                    student = probs if cfg.temperature == 1.0 else tempered(logits, cfg.temperature)
                    distill = distillation_loss(cfg.distill_loss, teacher_probs[idx], student)
                    loss = ce * alpha + distill * (1.0 - alpha)
                if not np.isfinite(loss.data):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}, batch starting {start}")
                tape.backward(loss)
            opt.step(lr)
            b = len(idx)
            tot_loss += loss.item() * b
            tot_ce += ce.item() * b
            tot_distill += (distill.item() if distill is not None else 0.0) * b
        metrics = evaluate(net, eval_data, eval_encoder, cfg.T, eval_reference)
        log.records.append(EpochRecord(epoch, tot_loss / n, tot_ce / n, tot_distill / n, *metrics, lr))
        logger.info("epoch %d loss %.4f evt_acc %.3f", epoch, tot_loss / n, metrics[3])
        if on_epoch is not None:
            on_epoch(epoch, net)
    return log


def pretrain_direct(
    net: SpikingNetwork,
    data: Dataset,
    cfg: TransferConfig,
    eval_data: Dataset | None = None,
    eval_encoder: Encoder | None = None,
    on_epoch: EpochHook | None = None,
) -> tuple[SpikingNetwork, TrainLog]:
    """Minimise CE on direct-coded inputs; trains ``net`` in place."""
    log = _fit(net, data, cfg, encode_direct, eval_encoder, None, 1.0, eval_data, None, on_epoch)
    return net, log


def _reference_probs(teacher: SpikingNetwork, data: Dataset, T: int) -> np.ndarray:
    return predict_probs(teacher, data.x, encode_direct, T)


def train_tsf(
    net_init: SpikingNetwork,
    data: Dataset,
    encoder: Encoder,
    cfg: TransferConfig,
    eval_data: Dataset | None = None,
    on_epoch: EpochHook | None = None,
) -> tuple[SpikingNetwork, TrainLog]:
    """Finetune a copy of the pretrained net on the event objective alone.

    ``kl_mean`` in the log is measured against the untouched pretrained net on
    direct input, so TSF and SKD logs are comparable.
    """
    net = net_init.copy()
    ref = _reference_probs(net_init, eval_data or data, cfg.T)
    log = _fit(net, data, cfg, encoder, encoder, None, 1.0, eval_data, ref, on_epoch)
    return net, log


def train_skd(
    teacher: SpikingNetwork,
    student: SpikingNetwork,
    data: Dataset,
    encoder: Encoder,
    cfg: TransferConfig,
    eval_data: Dataset | None = None,
    on_epoch: EpochHook | None = None,
) -> tuple[SpikingNetwork, TrainLog]:
    """``alpha * CE(student(e(x)), y) + (1 - alpha) * D(teacher(x), student(e(x)))``.

    The teacher is evaluated on direct code once up front and never updated;
    the student is trained in place.
    """
    teacher_probs = predict_probs(teacher, data.x, encode_direct, cfg.T)
    if cfg.temperature != 1.0:
        teacher_probs = _tempered_probs(teacher, data, cfg)
    ref = _reference_probs(teacher, eval_data or data, cfg.T)
    log = _fit(student, data, cfg, encoder, encoder, teacher_probs, cfg.alpha, eval_data, ref, on_epoch)
    return student, log


def _tempered_probs(net: SpikingNetwork, data: Dataset, cfg: TransferConfig) -> np.ndarray:
    out = []
    x = data.x
    for start in range(0, len(x), 256):
        out.append(tempered(run_unrolled(net, encode_direct(x[start : start + 256], cfg.T)), cfg.temperature).data)
    return np.concatenate(out)


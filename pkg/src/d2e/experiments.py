"""Experiment runners shared by the CLI and the acceptance suite.

Seeding: a run with seed ``s`` initialises weights from ``s`` and shuffles
with ``s`` in both pretraining and transfer. Datasets come from
``data.seed`` (defaulting to the run seed), so multi-seed sweeps share data.
The evaluation split uses ``data.seed + 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analysis import (
    BoundReport,
    CollapseStats,
    CostLedger,
    EnergyReport,
    bound_trajectory,
    energy_for_network,
    expected_kl,
    fit_tv_constant,
    gradient_mismatch_norm,
    input_tv_exact,
    kl_rows,
    layer1_collapse_stats,
    make_report,
    parse_tv_mode,
    soft_accuracy_from_probs,
    training_cost,
)
from .config import ENUMERABLE_KINDS, ConfigError, ExperimentConfig
from .data import Dataset, binary_pixels, gen_synthetic
from .encoders import Encoder, encode_direct, get_encoder
from .network import ARCHITECTURES, ArchitectureSpec, SpikingNetwork, build, firing_rates, predict_probs, tiny_mlp
from .training import TrainLog, pretrain_direct, train_skd, train_tsf


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """(train, eval). Enumerable kinds evaluate on the training space itself."""
    kind = cfg["data.kind"]
    if kind in ENUMERABLE_KINDS:
        data = binary_pixels(kind.split("-", 1)[1])
        return data, data
    if kind == "file":
        train = Dataset.load(cfg["data.path"])
        return train, Dataset.load(cfg["data.eval_path"]) if cfg["data.eval_path"] else train
    common = dict(size=cfg["data.size"], noise=cfg["data.noise"], jitter=cfg["data.jitter"])
    train = gen_synthetic(kind, cfg["data.n"], cfg.data_seed, **common)
    held_out = gen_synthetic(kind, cfg["data.eval_n"], cfg.data_seed + 1, **common)
    return train, held_out


def architecture(cfg: ExperimentConfig, data: Dataset) -> ArchitectureSpec:
    name = cfg["arch.name"]
    if name == "tiny-mlp":
        spec = tiny_mlp(data.image_shape, data.classes, cfg["arch.hidden"])
    else:
        spec = ARCHITECTURES[name](data.image_shape, data.classes)
    try:
        spec.geometry()
    except ValueError as exc:
        raise ConfigError("arch.name", str(exc)) from None
    return spec


def encoder(cfg: ExperimentConfig) -> Encoder:
    return get_encoder(cfg["encoder.name"], **cfg.encoder_params())


def fresh_net(cfg: ExperimentConfig, data: Dataset) -> SpikingNetwork:
    return build(architecture(cfg, data), cfg.seed, gain=cfg["arch.init_gain"])


def save_net(net: SpikingNetwork, path) -> None:
    np.savez(path, **net.state_arrays())


def load_net(cfg: ExperimentConfig, data: Dataset, path) -> SpikingNetwork:
    net = fresh_net(cfg, data)
    try:
        with np.load(path) as archive:
            net.load_arrays({name: archive[name] for name in archive.files})
    except (KeyError, ValueError) as exc:
        raise ConfigError("teacher.path", f"weights in {path} do not fit {net.arch.name}: {exc}") from None
    return net


_TEACHERS: dict[tuple, tuple[SpikingNetwork, TrainLog]] = {}


def _teacher_key(cfg: ExperimentConfig) -> tuple:
    keep = ("seed", "T", "teacher.path")
    return tuple((k, repr(v)) for k, v in sorted(cfg.values.items()) if k.split(".")[0] in ("arch", "data", "pretrain", "encoder") or k in keep)


def pretrained(cfg: ExperimentConfig, train: Dataset, eval_data: Dataset) -> tuple[SpikingNetwork, TrainLog]:
    """Direct-coded teacher for this seed, loaded from ``teacher.path`` or trained.

    Results are memoised per process; callers must not mutate the returned net.
    """
    key = _teacher_key(cfg)
    if key not in _TEACHERS:
        if cfg["teacher.path"]:
            _TEACHERS[key] = (load_net(cfg, train, cfg["teacher.path"]), TrainLog())
        else:
            net = fresh_net(cfg, train)
            _TEACHERS[key] = pretrain_direct(net, train, cfg.pretrain_config(), eval_data, encoder(cfg))
    return _TEACHERS[key]


def transfer(cfg: ExperimentConfig, mode: str, **overrides) -> tuple[SpikingNetwork, SpikingNetwork, TrainLog]:
    """(teacher, transferred net, log) for ``mode`` in {tsf, skd}."""
    train, held_out = load_data(cfg)
    teacher, _ = pretrained(cfg, train, held_out)
    tcfg = cfg.transfer_config(**overrides)
    if mode == "tsf":
        net, log = train_tsf(teacher, train, encoder(cfg), tcfg, held_out)
    elif mode == "skd":
        net, log = train_skd(teacher, teacher.copy(), train, encoder(cfg), tcfg, held_out)
    else:
        raise ConfigError("mode", f"transfer mode must be tsf or skd, got {mode!r}")
    return teacher, net, log


SWEEP_COLUMNS = ("alpha", "seeds", "acc_evt_hard", "acc_evt_soft", "acc_dir_hard", "kl_mean")
ABLATION_COLUMNS = ("distill_loss", "seeds", "acc_evt_hard", "acc_evt_soft", "forward_kl", "forward_kl_train")


def _seeds(cfg: ExperimentConfig, count: int) -> list[ExperimentConfig]:
    return [cfg.with_seed(cfg.seed + k) for k in range(count)]


def sweep_alpha(cfg: ExperimentConfig) -> tuple[list[dict], list[dict]]:
    """(one row per alpha averaged over seeds, per-seed rows)."""
    rows, detail = [], []
    runs = _seeds(cfg, cfg["sweep.seeds"])
    for alpha in cfg["sweep.alphas"]:
        finals = []
        for run in runs:
            _, _, log = transfer(run, "skd", alpha=alpha)
            last = log.records[-1]
            finals.append(last)
            detail.append({"alpha": alpha, "seed": run.seed, "acc_evt_hard": last.acc_evt_hard, "acc_evt_soft": last.acc_evt_soft, "acc_dir_hard": last.acc_dir_hard, "kl_mean": last.kl_mean})
        rows.append(
            {
                "alpha": alpha,
                "seeds": len(runs),
                "acc_evt_hard": _mean(r.acc_evt_hard for r in finals),
                "acc_evt_soft": _mean(r.acc_evt_soft for r in finals),
                "acc_dir_hard": _mean(r.acc_dir_hard for r in finals),
                "kl_mean": _mean(r.kl_mean for r in finals),
            }
        )
    return rows, detail


def ablate_loss(cfg: ExperimentConfig) -> tuple[list[dict], list[dict]]:
    """SKD once per distillation variant.

    ``forward_kl`` is the final KL(teacher || student) on the evaluation split,
    ``forward_kl_train`` the same quantity on the data the student was fit to.
    """
    rows, detail = [], []
    runs = _seeds(cfg, cfg["ablate.seeds"])
    train, _ = load_data(cfg)
    for variant in cfg["ablate.losses"]:
        finals, train_kls = [], []
        for run in runs:
            teacher, net, log = transfer(run, "skd", distill_loss=variant)
            last = log.records[-1]
            finals.append(last)
            train_kls.append(expected_kl(teacher, net, train, encoder(run), run["T"]))
            detail.append(
                {
                    "distill_loss": variant,
                    "seed": run.seed,
                    "acc_evt_hard": last.acc_evt_hard,
                    "acc_evt_soft": last.acc_evt_soft,
                    "forward_kl": last.kl_mean,
                    "forward_kl_train": train_kls[-1],
                }
            )
        rows.append(
            {
                "distill_loss": variant,
                "seeds": len(runs),
                "acc_evt_hard": _mean(r.acc_evt_hard for r in finals),
                "acc_evt_soft": _mean(r.acc_evt_soft for r in finals),
                "forward_kl": _mean(r.kl_mean for r in finals),
                "forward_kl_train": _mean(train_kls),
            }
        )
    return rows, detail


def _mean(values) -> float:
    values = list(values)
    return float(sum(values) / len(values))


@dataclass
class BoundTrace:
    reports: list[BoundReport]
    tv_mode: str
    tv: float
    log: TrainLog


def bound_trace(cfg: ExperimentConfig) -> BoundTrace:
    """KL, soft-accuracy gap and bound before transfer (epoch 0) and after each SKD epoch."""
    train, held_out = load_data(cfg)
    enc = encoder(cfg)
    T = cfg["T"]
    kind, constant = parse_tv_mode(cfg["bound.tv_mode"])
    teacher, _ = pretrained(cfg, train, held_out)
    weights = held_out.weights if held_out.enumerable else None
    p_teacher = predict_probs(teacher, held_out.x, encode_direct, T)
    acc_teacher = soft_accuracy_from_probs(p_teacher, held_out.labels, weights)
    points: list[tuple[float, float]] = []

    def measure(_epoch: int, student: SpikingNetwork) -> None:
        q = predict_probs(student, held_out.x, enc, T)
        rows = kl_rows(p_teacher, q)
        kl = float(rows.mean()) if weights is None else float((weights * rows).sum())
        gap = abs(acc_teacher - soft_accuracy_from_probs(q, held_out.labels, weights))
        points.append((kl, gap))

    student = teacher.copy()
    measure(-1, student)
    _, log = train_skd(teacher, student, train, enc, cfg.transfer_config(), held_out, on_epoch=measure)
    kls = [k for k, _ in points]
    gaps = [g for _, g in points]
    if kind == "exact":
        tv = input_tv_exact(held_out, enc, T)
    elif kind == "constant":
        tv = constant
    else:
        tv = fit_tv_constant(kls, gaps)
    if kind == "fit":
        reports = bound_trajectory(kls, gaps, tv)
    else:
        reports = [make_report(i, k, g, tv) for i, (k, g) in enumerate(points)]
    return BoundTrace(reports, kind, tv, log)


def energy(cfg: ExperimentConfig) -> EnergyReport:
    """Energy per image: direct-coded teacher vs SKD-transferred event net, measured rates."""
    teacher, student, _ = transfer(cfg, "skd")
    _, held_out = load_data(cfg)
    T = cfg["T"]
    r_dir, _ = firing_rates(teacher, held_out.x, encode_direct, T)
    r_evt, _ = firing_rates(student, held_out.x, encoder(cfg), T)
    return energy_for_network(teacher, r_dir, r_evt, T, cfg["energy.e_mac"], cfg["energy.e_ac"])


def cost(cfg: ExperimentConfig) -> CostLedger:
    train, _ = load_data(cfg)
    return training_cost(architecture(cfg, train), cfg["T"], cfg["cost.mode"], cfg["cost.assume_equal"])


def uniform_images(n: int, shape: tuple[int, ...], seed: int) -> np.ndarray:
    """``n`` images with i.i.d. U(0, 1) pixels on the 8-bit grid."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, (n,) + tuple(shape)).astype(np.float64) / 255.0


def collapse(cfg: ExperimentConfig) -> CollapseStats:
    """Layer-1 pre-activation statistics of the pretrained net on uniform random images."""
    train, held_out = load_data(cfg)
    teacher, _ = pretrained(cfg, train, held_out)
    images = uniform_images(cfg["collapse.n"], train.image_shape, cfg.seed)
    return layer1_collapse_stats(teacher, images, cfg["T"], encoder(cfg))


def mismatch(cfg: ExperimentConfig) -> dict:
    train, held_out = load_data(cfg)
    teacher, _ = pretrained(cfg, train, held_out)
    event_norm, direct_norm = gradient_mismatch_norm(teacher, held_out, encoder(cfg), cfg["T"])
    return {"event_norm": event_norm, "direct_norm": direct_norm, "ratio": event_norm / direct_norm if direct_norm else math.inf}

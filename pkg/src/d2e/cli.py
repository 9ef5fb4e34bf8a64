"""``d2e <subcommand> --config <path> [--set k=v]... [--out <dir>]``.

Exit codes: 0 success, 2 bad config, 3 numeric divergence, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .analysis import BOUND_COLUMNS, capacity_bound, enumerate_ttfs_codewords
from .config import ConfigError, ExperimentConfig, load, parse_overrides
from .data import DatasetFormatError
from .reports import write_json, write_table
from .training import LOG_COLUMNS, DivergenceError

EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4

ENERGY_COLUMNS = ("T", "e_mac", "e_ac", "E_direct", "E_TTFS", "savings_pct", "sops", "r_dir", "r_evt")
COST_COLUMNS = ("mode", "F_evt", "F_dir", "tsf_cost", "skd_cost", "overhead_pct", "total")
COLLAPSE_COLUMNS = ("n", "T", "mean_direct", "mean_ttfs", "ratio", "ratio_times_T")
MISMATCH_COLUMNS = ("event_norm", "direct_norm", "ratio")
CAPACITY_COLUMNS = ("d", "T", "bits", "codewords")


def _joined(values) -> str:
    return ";".join(repr(float(v)) if isinstance(v, float) else str(v) for v in values)


def _log_rows(log) -> list[dict]:
    return log.to_dicts()


def _plot(cfg: ExperimentConfig, *args, **kwargs) -> None:
    if cfg["report.plots"]:
        from .plotting import line_plot

        line_plot(*args, **kwargs)


def cmd_gen_data(cfg: ExperimentConfig, out: Path, args) -> str:
    train, held_out = ex.load_data(cfg)
    out.mkdir(parents=True, exist_ok=True)
    train.save(out / "train.d2e")
    held_out.save(out / "eval.d2e")
    return f"wrote {len(train)} train and {len(held_out)} eval samples to {out}"


def cmd_pretrain(cfg: ExperimentConfig, out: Path, args) -> str:
    train, held_out = ex.load_data(cfg)
    net, log = ex.pretrained(cfg, train, held_out)
    write_table(out, "trainlog", LOG_COLUMNS, _log_rows(log), cfg["report.formats"])
    ex.save_net(net, out / "teacher.npz")
    last = log.records[-1] if log.records else None
    if last is None:
        return "loaded teacher weights"
    return f"direct acc {last.acc_dir_hard:.4f}, event acc {last.acc_evt_hard:.4f}"


def cmd_transfer(cfg: ExperimentConfig, out: Path, args) -> str:
    _, _, log = ex.transfer(cfg, args.mode)
    write_table(out, f"trainlog_{args.mode}", LOG_COLUMNS, _log_rows(log), cfg["report.formats"])
    last = log.records[-1]
    return f"{args.mode}: event acc {last.acc_evt_hard:.4f}, direct acc {last.acc_dir_hard:.4f}, kl {last.kl_mean:.4f}"


def cmd_sweep_alpha(cfg: ExperimentConfig, out: Path, args) -> str:
    rows, detail = ex.sweep_alpha(cfg)
    write_table(out, "alpha_sweep", ex.SWEEP_COLUMNS, rows, cfg["report.formats"])
    write_json(out / "alpha_sweep_runs.json", detail)
    alphas = [r["alpha"] for r in rows]
    _plot(cfg, [("event accuracy", alphas, [r["acc_evt_hard"] for r in rows])], out / "alpha_curve.svg", "alpha sweep", "alpha", "event hard accuracy")
    best = max(rows, key=lambda r: r["acc_evt_hard"])
    return f"{len(rows)} alphas; best alpha {best['alpha']} with event acc {best['acc_evt_hard']:.4f}"


def cmd_ablate_loss(cfg: ExperimentConfig, out: Path, args) -> str:
    rows, detail = ex.ablate_loss(cfg)
    write_table(out, "loss_ablation", ex.ABLATION_COLUMNS, rows, cfg["report.formats"])
    write_json(out / "loss_ablation_runs.json", detail)
    lowest = min(rows, key=lambda r: r["forward_kl_train"])
    return f"{len(rows)} variants; lowest training-set forward KL from {lowest['distill_loss']} ({lowest['forward_kl_train']:.4f})"


def cmd_bound_trace(cfg: ExperimentConfig, out: Path, args) -> str:
    trace = ex.bound_trace(cfg)
    rows = [r.to_dict() for r in trace.reports]
    write_table(out, "bound_trace", BOUND_COLUMNS, rows, cfg["report.formats"])
    write_table(out, "trainlog_skd", LOG_COLUMNS, _log_rows(trace.log), cfg["report.formats"])
    epochs = [r.epoch for r in trace.reports]
    _plot(
        cfg,
        [("KL", epochs, [r.kl_mean for r in trace.reports])],
        out / "kl_vs_gap.svg",
        "KL and soft-accuracy gap",
        "epoch",
        "KL (nats)",
        right=[("gap", epochs, [r.acc_gap for r in trace.reports])],
        right_label="soft-accuracy gap",
    )
    _plot(
        cfg,
        [("gap", epochs, [r.acc_gap for r in trace.reports]), ("bound", epochs, [r.rhs for r in trace.reports])],
        out / "bound_tightness.svg",
        "bound tightness",
        "epoch",
        "value",
    )
    violations = sum(not r.holds for r in trace.reports)
    return f"tv {trace.tv_mode} = {trace.tv:.6f}; {len(rows)} points, {violations} violations"


def cmd_energy(cfg: ExperimentConfig, out: Path, args) -> str:
    report = ex.energy(cfg)
    row = report.to_dict()
    csv_row = dict(row, sops=_joined(report.sops), r_dir=_joined(report.r_dir), r_evt=_joined(report.r_evt))
    out.mkdir(parents=True, exist_ok=True)
    if "csv" in cfg["report.formats"]:
        write_table(out, "energy", ENERGY_COLUMNS, [csv_row], ("csv",))
    if "json" in cfg["report.formats"]:
        write_json(out / "energy.json", row)
    return f"E_direct {report.E_direct:.6e} J, E_TTFS {report.E_TTFS:.6e} J, savings {report.savings_pct:.2f}% (constant-dependent)"


def cmd_cost(cfg: ExperimentConfig, out: Path, args) -> str:
    ledger = ex.cost(cfg)
    write_table(out, "cost_ledger", COST_COLUMNS, [ledger.to_dict()], cfg["report.formats"])
    return f"tsf {ledger.tsf_cost:.6e}, skd {ledger.skd_cost:.6e} FLOPs/sample; overhead {ledger.overhead_pct:.2f}%"


def cmd_collapse(cfg: ExperimentConfig, out: Path, args) -> str:
    stats = ex.collapse(cfg)
    row = {
        "n": cfg["collapse.n"],
        "T": cfg["T"],
        "mean_direct": stats.mean_direct,
        "mean_ttfs": stats.mean_ttfs,
        "ratio": stats.ratio,
        "ratio_times_T": stats.ratio * cfg["T"],
    }
    write_table(out, "collapse", COLLAPSE_COLUMNS, [row], cfg["report.formats"])
    return f"ratio {stats.ratio:.4f} (x T = {stats.ratio * cfg['T']:.4f})"


def cmd_mismatch(cfg: ExperimentConfig, out: Path, args) -> str:
    row = ex.mismatch(cfg)
    write_table(out, "mismatch", MISMATCH_COLUMNS, [row], cfg["report.formats"])
    return f"gradient norm: event {row['event_norm']:.6f}, direct {row['direct_norm']:.6f}"


def cmd_capacity(cfg: ExperimentConfig | None, out: Path | None, args) -> str:
    d = args.d if args.d is not None else 3072
    T = args.T if args.T is not None else (cfg["T"] if cfg else 8)
    try:
        bits = capacity_bound(d, T)
    except ValueError as exc:
        raise ConfigError("--d/--T", str(exc)) from None
    codewords = None
    if args.enumerate:
        if d > 4:
            raise ConfigError("--d", "exhaustive enumeration is limited to d <= 4")
        codewords = len(enumerate_ttfs_codewords(d, T))
    if out is not None:
        row = {"d": d, "T": T, "bits": bits, "codewords": "" if codewords is None else codewords}
        write_table(out, "capacity", CAPACITY_COLUMNS, [row], cfg["report.formats"] if cfg else ("csv", "json"))
    text = f"{bits:.2f}"
    if codewords is not None:
        text += f"\ncodewords {codewords}"
    return text


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "transfer": cmd_transfer,
    "sweep-alpha": cmd_sweep_alpha,
    "ablate-loss": cmd_ablate_loss,
    "bound-trace": cmd_bound_trace,
    "energy": cmd_energy,
    "cost": cmd_cost,
    "capacity": cmd_capacity,
    "collapse": cmd_collapse,
    "mismatch": cmd_mismatch,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="d2e", description="Direct-to-event transfer experiments for spiking networks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "capacity", help="flat key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key (repeatable)")
        p.add_argument("--out", help="output directory (default: runs/<subcommand>)")
        if name == "transfer":
            p.add_argument("mode", choices=("tsf", "skd"))
        if name == "capacity":
            p.add_argument("--d", type=int, help="pixels per image (default 3072)")
            p.add_argument("--T", type=int, help="timesteps (default 8, or T from --config)")
            p.add_argument("--enumerate", action="store_true", help="also count TTFS codewords exhaustively")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        overrides = parse_overrides(args.set)
        cfg = load(args.config, overrides) if args.config else None
        if args.out:
            out = Path(args.out)
        elif args.command == "capacity" and cfg is None:
            out = None
        else:
            out = Path("runs") / args.command
        message = COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"d2e: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"d2e: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, DatasetFormatError) as exc:
        print(f"d2e: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(message)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Flat ``section.key=value`` experiment configs.

One assignment per line, ``#`` starts a comment, blank lines are ignored.
``seed`` is mandatory; every other key has a default listed in ``SCHEMA``.
Unknown keys and unparsable values raise :class:`ConfigError` naming the key.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

from .network import ARCHITECTURES
from .training import DISTILL_LOSSES, TransferConfig


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config field '{key}': {message}")
        self.key = key


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(",") if part.strip())


def _words(text: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


def _opt_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none") else int(text)


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none") else float(text)


def _str(text: str) -> str:
    return text.strip()


# key -> (parser, default); a default of None means "derived" or "unset"
SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    "seed": (int, None),
    "T": (int, 8),
    "arch.name": (_str, "tiny-mlp"),
    "arch.hidden": (int, 64),
    "arch.init_gain": (_opt_float, None),
    "data.kind": (_str, "bars"),
    "data.n": (int, 1024),
    "data.eval_n": (int, 1000),
    "data.seed": (_opt_int, None),
    "data.size": (int, 16),
    "data.noise": (float, 0.3),
    "data.jitter": (float, 30.0),
    "data.path": (_str, ""),
    "data.eval_path": (_str, ""),
    "encoder.name": (_str, "ttfs"),
    "encoder.threshold": (float, 0.15),
    "encoder.amplitude": (float, 2.0),
    "encoder.motion": (_str, "triangle"),
    "encoder.merge_polarity": (_bool, True),
    "pretrain.epochs": (int, 10),
    "pretrain.batch_size": (int, 32),
    "pretrain.lr_ref": (float, 1.0),
    "pretrain.momentum": (float, 0.9),
    "pretrain.warmup_epochs": (int, 1),
    "teacher.path": (_str, ""),
    "transfer.alpha": (float, 0.4),
    "transfer.distill_loss": (_str, "forward_kl"),
    "transfer.epochs": (int, 1),
    "transfer.batch_size": (int, 32),
    "transfer.lr_ref": (float, 0.6),
    "transfer.momentum": (float, 0.9),
    "transfer.warmup_epochs": (int, 0),
    "transfer.temperature": (float, 1.0),
    "sweep.alphas": (_floats, (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)),
    "sweep.seeds": (int, 1),
    "ablate.losses": (_words, DISTILL_LOSSES),
    "ablate.seeds": (int, 1),
    "bound.tv_mode": (_str, "fit"),
    "energy.e_mac": (float, 4.6e-12),
    "energy.e_ac": (float, 0.9e-12),
    "cost.mode": (_str, "skd"),
    "cost.assume_equal": (_bool, False),
    "collapse.n": (int, 1000),
    "report.formats": (_words, ("csv", "json")),
    "report.plots": (_bool, False),
}

ENCODERS = ("direct", "ttfs", "dvs")
SYNTHETIC_KINDS = ("two-blobs", "bars", "checker")
ENUMERABLE_KINDS = ("binary-majority", "binary-top-row")
DATA_KINDS = SYNTHETIC_KINDS + ENUMERABLE_KINDS + ("file",)


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    @property
    def data_seed(self) -> int:
        ds = self.values["data.seed"]
        return self.seed if ds is None else ds

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Same experiment, new run seed; the dataset stays pinned to the original."""
        values = dict(self.values)
        values["data.seed"] = self.data_seed
        values["seed"] = seed
        return ExperimentConfig(values)

    def updated(self, overrides: dict[str, str]) -> "ExperimentConfig":
        return from_pairs(list(self._raw_pairs()) + list(overrides.items()))

    def _raw_pairs(self) -> Iterable[tuple[str, str]]:
        for key, value in self.values.items():
            if value is None:
                continue
            if isinstance(value, tuple):
                yield key, ",".join(str(v) for v in value)
            else:
                yield key, str(value)

    def pretrain_config(self) -> TransferConfig:
        v = self.values
        return TransferConfig(
            alpha=1.0,
            epochs=v["pretrain.epochs"],
            batch_size=v["pretrain.batch_size"],
            lr_ref=v["pretrain.lr_ref"],
            momentum=v["pretrain.momentum"],
            warmup_epochs=v["pretrain.warmup_epochs"],
            seed=self.seed,
            T=v["T"],
        )

    def transfer_config(self, **overrides) -> TransferConfig:
        v = self.values
        kwargs = dict(
            alpha=v["transfer.alpha"],
            distill_loss=v["transfer.distill_loss"],
            epochs=v["transfer.epochs"],
            batch_size=v["transfer.batch_size"],
            lr_ref=v["transfer.lr_ref"],
            momentum=v["transfer.momentum"],
            warmup_epochs=v["transfer.warmup_epochs"],
            seed=self.seed,
            T=v["T"],
            temperature=v["transfer.temperature"],
        )
        kwargs.update(overrides)
        return TransferConfig(**kwargs)

    def encoder_params(self) -> dict[str, Any]:
        if self.values["encoder.name"] != "dvs":
            return {}
        v = self.values
        return {
            "threshold": v["encoder.threshold"],
            "amplitude": v["encoder.amplitude"],
            "motion": v["encoder.motion"],
            "merge_polarity": v["encoder.merge_polarity"],
        }


def parse_text(text: str) -> list[tuple[str, str]]:
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected key=value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def parse_overrides(items: Iterable[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(item, "overrides must look like key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def from_pairs(pairs: Iterable[tuple[str, str]]) -> ExperimentConfig:
    values = {key: default for key, (_, default) in SCHEMA.items()}
    for key, raw in pairs:
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key")
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(raw)
        except ValueError as exc:
            raise ConfigError(key, f"cannot parse {raw!r} ({exc})") from None
    _validate(values)
    return ExperimentConfig(values)


def load(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    return from_pairs(parse_text(text) + list((overrides or {}).items()))


def _validate(v: dict[str, Any]) -> None:
    def need(key: str, ok: bool, message: str) -> None:
        if not ok:
            raise ConfigError(key, message)

    need("seed", v["seed"] is not None, "required (no implicit randomness)")
    need("T", v["T"] >= 1, "must be >= 1")
    need("arch.name", v["arch.name"] in ARCHITECTURES, f"must be one of {sorted(ARCHITECTURES)}")
    need("arch.hidden", v["arch.hidden"] >= 1, "must be >= 1")
    need("data.kind", v["data.kind"] in DATA_KINDS, f"must be one of {DATA_KINDS}")
    need("data.path", v["data.kind"] != "file" or bool(v["data.path"]), "required when data.kind=file")
    need("data.n", v["data.n"] >= 1, "must be >= 1")
    need("data.eval_n", v["data.eval_n"] >= 1, "must be >= 1")
    need("encoder.name", v["encoder.name"] in ENCODERS, f"must be one of {ENCODERS}")
    need("encoder.threshold", v["encoder.threshold"] > 0, "must be > 0")
    need("encoder.motion", v["encoder.motion"] in ("triangle", "static"), "must be triangle or static")
    for section in ("pretrain", "transfer"):
        need(f"{section}.epochs", v[f"{section}.epochs"] >= 0, "must be >= 0")
        need(f"{section}.batch_size", v[f"{section}.batch_size"] >= 1, "must be >= 1")
        need(f"{section}.lr_ref", v[f"{section}.lr_ref"] > 0, "must be > 0")
        need(f"{section}.warmup_epochs", v[f"{section}.warmup_epochs"] >= 0, "must be >= 0")
    need("transfer.alpha", 0.0 <= v["transfer.alpha"] <= 1.0, "must lie in [0, 1]")
    need("transfer.distill_loss", v["transfer.distill_loss"] in DISTILL_LOSSES, f"must be one of {DISTILL_LOSSES}")
    need("transfer.temperature", v["transfer.temperature"] > 0, "must be > 0")
    need("sweep.alphas", bool(v["sweep.alphas"]) and all(0.0 <= a <= 1.0 for a in v["sweep.alphas"]), "need alphas in [0, 1]")
    need("ablate.losses", bool(v["ablate.losses"]) and all(n in DISTILL_LOSSES for n in v["ablate.losses"]), f"each must be one of {DISTILL_LOSSES}")
    need("sweep.seeds", v["sweep.seeds"] >= 1, "must be >= 1")
    need("ablate.seeds", v["ablate.seeds"] >= 1, "must be >= 1")
    tv = v["bound.tv_mode"]
    if tv.startswith("constant:"):
        try:
            c = float(tv.split(":", 1)[1])
        except ValueError:
            raise ConfigError("bound.tv_mode", f"bad constant in {tv!r}") from None
        need("bound.tv_mode", 0.0 <= c <= 1.0, "TV constant must lie in [0, 1]")
    else:
        need("bound.tv_mode", tv in ("exact", "fit"), "must be exact, fit or constant:<c>")
        need("bound.tv_mode", tv != "exact" or v["data.kind"] in ENUMERABLE_KINDS, "exact TV needs an enumerable data.kind")
    need("energy.e_mac", v["energy.e_mac"] > 0, "must be > 0")
    need("energy.e_ac", v["energy.e_ac"] > 0, "must be > 0")
    need("cost.mode", v["cost.mode"] in ("tsf", "skd"), "must be tsf or skd")
    need("collapse.n", v["collapse.n"] >= 1, "must be >= 1")
    need("report.formats", set(v["report.formats"]) <= {"csv", "json"} and bool(v["report.formats"]), "formats are csv and/or json")

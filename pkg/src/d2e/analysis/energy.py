"""Synaptic-operation counts, inference energy per coding, and training FLOP ledgers.

Energy constants are inputs. The defaults are the usual 45 nm, 32-bit
figures (MAC 4.6 pJ, AC 0.9 pJ); every absolute joule value depends on them.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

from ..network import ArchitectureSpec, SpikingNetwork

E_MAC = 4.6e-12
E_AC = 0.9e-12


def count_sops(spec: ArchitectureSpec) -> list[int]:
    """``M_l`` for every weighted layer, in order.

    Conv: ``C_in * K^2 * H_out * W_out * C_out``. Affine: ``fan_in * fan_out``.
    """
    sops = []
    for layer, in_shape, out_shape in spec.geometry():
        if layer.kind == "conv":
            sops.append(in_shape[0] * layer.kernel**2 * out_shape[1] * out_shape[2] * layer.out)
        elif layer.kind in ("affine", "readout"):
            sops.append(in_shape[0] * out_shape[0])
    return sops


def synaptic_input_rates(net: SpikingNetwork, layer_rates: Sequence[float]) -> list[float]:
    """Spike rate arriving at each weighted layer after the first.

    ``layer_rates`` is the per-spiking-layer output of
    :func:`d2e.network.firing_rates`; average pooling preserves the mean rate,
    so a layer sees the rate of the closest spiking layer before it.
    """
    by_index = dict(zip(net.spiking_layers(), layer_rates))
    rates = []
    for w in net.weighted_layers()[1:]:
        prior = [i for i in by_index if i < w]
        rates.append(by_index[max(prior)] if prior else 1.0)
    return rates


@dataclass
class EnergyReport:
    sops: list[int]
    r_dir: list[float]
    r_evt: list[float]
    T: int
    e_mac: float
    e_ac: float
    E_direct: float
    E_TTFS: float
    savings_pct: float

    def to_dict(self) -> dict:
        return asdict(self)


def estimate_energy(
    sops: Sequence[int],
    r_dir: Sequence[float],
    r_evt: Sequence[float],
    T: int,
    e_mac: float = E_MAC,
    e_ac: float = E_AC,
) -> EnergyReport:
    """Direct: one MAC pass over layer 1; TTFS: one AC pass (each input spikes once).

    ``r_dir`` / ``r_evt`` give the input spike rate of layers 2..L.
    """
    sops = [int(m) for m in sops]
    if not sops:
        raise ValueError("need at least one layer")
    r_dir = [float(r) for r in r_dir]
    r_evt = [float(r) for r in r_evt]
    for name, rates in (("r_dir", r_dir), ("r_evt", r_evt)):
        if len(rates) != len(sops) - 1:
            raise ValueError(f"{name} must hold one rate per layer after the first ({len(sops) - 1}), got {len(rates)}")
        if any(not 0.0 <= r <= 1.0 for r in rates):
            raise ValueError(f"{name} rates must lie in [0, 1]")
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if e_mac <= 0 or e_ac <= 0:
        raise ValueError("energy per operation must be > 0")
    rest_dir = sum(r * m for r, m in zip(r_dir, sops[1:]))
    rest_evt = sum(r * m for r, m in zip(r_evt, sops[1:]))
    e_direct = e_mac * sops[0] + T * e_ac * rest_dir
    e_ttfs = e_ac * sops[0] + T * e_ac * rest_evt
    savings = 100.0 * (e_direct - e_ttfs) / e_direct
    return EnergyReport(sops, r_dir, r_evt, T, e_mac, e_ac, e_direct, e_ttfs, savings)


@dataclass
class CostLedger:
    F_evt: float
    F_dir: float
    tsf_cost: float
    skd_cost: float
    overhead_pct: float
    mode: str = "skd"

    @property
    def total(self) -> float:
        return self.skd_cost if self.mode == "skd" else self.tsf_cost

    @classmethod
    def from_flops(cls, F_evt: float, F_dir: float, mode: str = "skd") -> "CostLedger":
        if mode not in ("tsf", "skd"):
            raise ValueError(f"mode must be tsf or skd, got {mode!r}")
        tsf = 3.0 * F_evt
        skd = 3.0 * F_evt + F_dir
        return cls(F_evt, F_dir, tsf, skd, 100.0 * F_dir / tsf, mode)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["total"] = self.total
        return out


def forward_flops(spec: ArchitectureSpec, T: int) -> tuple[float, float]:
    """(event forward, direct forward) FLOPs: ``2 M_l`` per layer per step.

    The direct pass evaluates the first layer once, since its input is static.
    """
    sops = count_sops(spec)
    f_evt = float(sum(2 * m * T for m in sops))
    f_dir = float(2 * sops[0] + sum(2 * m * T for m in sops[1:]))
    return f_evt, f_dir


def training_cost(spec: ArchitectureSpec, T: int, mode: str = "skd", assume_equal: bool = False) -> CostLedger:
    """Per-step training cost: backward ~ 2x forward; SKD adds one direct forward.

    ``assume_equal`` sets ``F_dir = F_evt``.
    """
    f_evt, f_dir = forward_flops(spec, T)
    return CostLedger.from_flops(f_evt, f_evt if assume_equal else f_dir, mode)


def energy_for_network(net: SpikingNetwork, rates_dir: Sequence[float], rates_evt: Sequence[float], T: int, e_mac: float = E_MAC, e_ac: float = E_AC) -> EnergyReport:
    """:func:`estimate_energy` from measured per-spiking-layer firing rates."""
    return estimate_energy(
        count_sops(net.arch),
        synaptic_input_rates(net, rates_dir),
        synaptic_input_rates(net, rates_evt),
        T,
        e_mac,
        e_ac,
    )


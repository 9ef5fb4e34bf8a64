"""Why a direct-coded net fails on events: capacity, layer-1 collapse, gradient mismatch."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ..autodiff import Tape, Tensor, cross_entropy
from ..data import Dataset
from ..encoders import Encoder, encode_direct, encode_ttfs
from ..network import SpikingNetwork, forward_probs


def capacity_bound(d: int, T: int) -> float:
    """Upper bound in bits on I(X; S) for ``d`` pixels coded with at most one spike in ``T`` steps."""
    if d < 1 or T < 1:
        raise ValueError(f"need d >= 1 and T >= 1, got d={d}, T={T}")
    return d * math.log2(T + 1)


def enumerate_ttfs_codewords(d: int, T: int, levels: int = 256) -> set[bytes]:
    """Distinct TTFS spike trains over every ``d``-pixel image on a ``levels``-step grid.

    Exhaustive over ``levels ** d`` images; keep ``d`` small.
    """
    grid = np.linspace(0.0, 1.0, levels)
    images = np.array(list(itertools.product(grid, repeat=d)))  # [levels**d, d]
    trains = encode_ttfs(images, T)  # [T, levels**d, d]
    return {np.ascontiguousarray(trains[:, i]).tobytes() for i in range(len(images))}


@dataclass
class CollapseStats:
    mean_direct: float
    mean_ttfs_per_step: np.ndarray
    mean_ttfs: float
    ratio: float


def layer1_collapse_stats(net: SpikingNetwork, images: np.ndarray, T: int, encoder: Encoder = encode_ttfs, batch_size: int = 250) -> CollapseStats:
    """Bias-free first-layer pre-activation means under direct vs event code.

    ``ratio`` is the time-averaged event mean over the direct mean, NaN when
    the direct mean is zero.
    """
    if len(images) == 0:
        raise ValueError("layer1_collapse_stats: empty dataset")
    first = next(net.layers[i] for i in net.weighted_layers())
    flatten_first = net.layers[0].spec.kind == "flatten"
    direct_sum = 0.0
    event_sums = np.zeros(T)
    count = 0
    for start in range(0, len(images), batch_size):
        x = images[start : start + batch_size]
        b = len(x)
        if flatten_first:
            x = x.reshape(b, -1)
        z = first.synaptic_forward(Tensor(x)).data
        direct_sum += float(z.sum())
        seq = encoder(images[start : start + batch_size], T)
        for t in range(T):
            st = seq[t].reshape(b, -1) if flatten_first else seq[t]
            event_sums[t] += float(first.synaptic_forward(Tensor(st)).data.sum())
        count += z.size
    mean_direct = direct_sum / count
    per_step = event_sums / count
    mean_evt = float(per_step.mean())
    ratio = mean_evt / mean_direct if mean_direct != 0.0 else math.nan
    return CollapseStats(mean_direct, per_step, mean_evt, ratio)


def mean_gradient_norm(net: SpikingNetwork, data: Dataset, encoder: Encoder, T: int, batch_size: int = 256) -> float:
    """L2 norm of the dataset-mean cross-entropy gradient w.r.t. all parameters."""
    params = net.parameters()
    totals = [np.zeros_like(p.data) for p in params]
    x, y = data.x, data.labels.astype(np.int64)
    n = len(data)
    for start in range(0, n, batch_size):
        for p in params:
            p.grad = None
        xb, yb = x[start : start + batch_size], y[start : start + batch_size]
        with Tape() as tape:
            loss = cross_entropy(forward_probs(net, encoder(xb, T)), yb)
            tape.backward(loss)
        for acc, p in zip(totals, params):
            if p.grad is not None:
                acc += p.grad * (len(yb) / n)
    for p in params:
        p.grad = None
    return math.sqrt(sum(float((g**2).sum()) for g in totals))


def gradient_mismatch_norm(net: SpikingNetwork, data: Dataset, encoder: Encoder, T: int) -> tuple[float, float]:
    """(norm on event input, norm on direct input) at the given weights."""
    return mean_gradient_norm(net, data, encoder, T), mean_gradient_norm(net, data, encode_direct, T)

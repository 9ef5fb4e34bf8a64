"""Hard-reset leaky integrate-and-fire neurons with an arctangent surrogate.

Charge follows the decay-toward-reset convention

    H = v + (I - (v - v_reset)) / tau

a spike is emitted where ``H >= v_threshold`` and the membrane is then set to
``v_reset`` exactly. The Heaviside step has no useful derivative, so backward
substitutes the derivative of the arctangent relaxation

    sg(u) = arctan(pi * alpha * u / 2) / pi + 1/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, add, custom_op, mul, sub


@dataclass(frozen=True)
class LIFParams:
    tau: float = 2.0
    v_threshold: float = 1.0
    v_reset: float = 0.0
    surrogate_alpha: float = 2.0
    # cut the gradient path through the reset term
    detach_reset: bool = False
    # forward uses the smooth relaxation instead of the step; gradient checking only
    smooth: bool = False

    def __post_init__(self):
        if not self.tau > 1.0:
            raise ValueError(f"tau must be > 1, got {self.tau}")
        if not self.v_threshold > self.v_reset:
            raise ValueError(f"v_threshold ({self.v_threshold}) must exceed v_reset ({self.v_reset})")
        if not self.surrogate_alpha > 0:
            raise ValueError(f"surrogate_alpha must be > 0, got {self.surrogate_alpha}")


@dataclass
class LIFLayerState:
    v: Tensor

    @classmethod
    def fresh(cls, shape, params: LIFParams) -> "LIFLayerState":
        return cls(Tensor(np.full(shape, params.v_reset)))


def surrogate_derivative(u, alpha: float):
    """``alpha / (2 (1 + (pi alpha u / 2)^2))``; works on scalars and arrays."""
    return alpha / (2.0 * (1.0 + (math.pi * alpha * np.asarray(u) / 2.0) ** 2))


def surrogate_sigmoid(u, alpha: float):
    return np.arctan(math.pi * alpha * np.asarray(u) / 2.0) / math.pi + 0.5


def spike(u: Tensor, alpha: float, smooth: bool = False) -> Tensor:
    """Heaviside(u) forward (``u >= 0`` fires), arctangent-surrogate backward."""
    if smooth:
        out = surrogate_sigmoid(u.data, alpha)
    else:
        out = (u.data >= 0.0).astype(np.float64)
    return custom_op(out, (u,), lambda g: (g * surrogate_derivative(u.data, alpha),), "spike")


def lif_step(state: LIFLayerState, input_current: Tensor, params: LIFParams) -> tuple[Tensor, LIFLayerState]:
    v = state.v
    if v.shape != input_current.shape:
        raise ShapeError(f"lif_step: state shape {v.shape} != input shape {input_current.shape}")
    charge = add(v, mul(sub(input_current, sub(v, params.v_reset)), 1.0 / params.tau))
    s = spike(sub(charge, params.v_threshold), params.surrogate_alpha, params.smooth)
    gate = s.detach() if params.detach_reset else s
    # H * (1 - s) + v_reset * s: exactly v_reset wherever s == 1
    new_v = add(mul(charge, sub(1.0, gate)), mul(gate, params.v_reset))
    return s, LIFLayerState(new_v)

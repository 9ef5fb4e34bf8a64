"""Desk-scale spiking architectures and the temporal readout.

A network is a flat list of layers applied to each timestep in turn. Spiking
layers carry an :class:`LIFLayerState` across time; the final affine readout
has no neuron after it, so its per-step outputs are real-valued logits.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    GeometryError,
    Tensor,
    affine,
    avg_pool2d,
    conv2d,
    conv_output_size,
    mean,
    reshape,
    softmax,
    stack,
)
from .neuron import LIFLayerState, LIFParams, lif_step


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" | "affine" | "pool" | "flatten" | "readout"
    out: int = 0
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    spiking: bool = True


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int]
    classes: int
    # weight-init scale used by build() unless overridden
    init_gain: float = 1.0

    def geometry(self) -> list[tuple[LayerSpec, tuple[int, ...], tuple[int, ...]]]:
        """(layer, input shape, output shape) per layer, per-sample shapes.

        Raises :class:`GeometryError` naming the first inconsistent layer.
        """
        shape: tuple[int, ...] = tuple(self.input_shape)
        chain = []
        for i, layer in enumerate(self.layers):
            where = f"{self.name} layer {i} ({layer.kind})"
            if layer.kind == "conv":
                if len(shape) != 3:
                    raise GeometryError(f"{where}: conv needs a [C, H, W] input, got {shape}")
                try:
                    h = conv_output_size(shape[1], layer.kernel, layer.stride, layer.padding)
                    w = conv_output_size(shape[2], layer.kernel, layer.stride, layer.padding)
                except GeometryError as exc:
                    raise GeometryError(f"{where}: {exc}") from None
                out = (layer.out, h, w)
            elif layer.kind == "pool":
                if len(shape) != 3 or shape[1] % layer.kernel or shape[2] % layer.kernel:
                    raise GeometryError(f"{where}: {shape} not divisible by pool size {layer.kernel}")
                out = (shape[0], shape[1] // layer.kernel, shape[2] // layer.kernel)
            elif layer.kind == "flatten":
                out = (int(np.prod(shape)),)
            elif layer.kind in ("affine", "readout"):
                if len(shape) != 1:
                    raise GeometryError(f"{where}: affine needs a flat input, got {shape}; add a flatten")
                out = (layer.out,)
            else:
                raise GeometryError(f"{where}: unknown layer kind")
            chain.append((layer, shape, out))
            shape = out
        readouts = [i for i, layer in enumerate(self.layers) if layer.kind == "readout"]
        if readouts != [len(self.layers) - 1]:
            raise GeometryError(f"{self.name}: exactly one readout layer, placed last, is required")
        if shape != (self.classes,):
            raise GeometryError(f"{self.name}: readout width {shape} != class count {self.classes}")
        return chain


def tiny_mlp(input_shape=(1, 16, 16), classes: int = 4, hidden: int = 64) -> ArchitectureSpec:
    return ArchitectureSpec(
        "tiny-mlp",
        (LayerSpec("flatten"), LayerSpec("affine", hidden), LayerSpec("readout", classes)),
        tuple(input_shape),
        classes,
    )


def tiny_conv(input_shape=(1, 16, 16), classes: int = 4) -> ArchitectureSpec:
    return ArchitectureSpec(
        "tiny-conv",
        (
            LayerSpec("conv", 8, kernel=3, padding=1),
            LayerSpec("pool", kernel=2),
            LayerSpec("conv", 16, kernel=3, padding=1),
            LayerSpec("pool", kernel=2),
            LayerSpec("flatten"),
            LayerSpec("readout", classes),
        ),
        tuple(input_shape),
        classes,
        init_gain=5.0,
    )


ARCHITECTURES = {"tiny-mlp": tiny_mlp, "tiny-conv": tiny_conv}


@dataclass
class Layer:
    spec: LayerSpec
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    weight: Tensor | None = None
    bias: Tensor | None = None

    @property
    def has_neuron(self) -> bool:
        return self.spec.kind in ("conv", "affine") and self.spec.spiking

    def forward(self, x: Tensor) -> Tensor:
        kind = self.spec.kind
        if kind == "conv":
            return conv2d(x, self.weight, self.bias, self.spec.stride, self.spec.padding)
        if kind in ("affine", "readout"):
            return affine(x, self.weight, self.bias)
        if kind == "pool":
            return avg_pool2d(x, self.spec.kernel)
        return reshape(x, (x.shape[0], -1))

    def synaptic_forward(self, x: Tensor) -> Tensor:
        """Pre-activation without the bias term."""
        if self.spec.kind == "conv":
            return conv2d(x, self.weight, None, self.spec.stride, self.spec.padding)
        return affine(x, self.weight, Tensor(np.zeros(self.weight.shape[0])))


@dataclass
class SpikingNetwork:
    arch: ArchitectureSpec
    layers: list[Layer]
    lif: LIFParams = field(default_factory=LIFParams)

    def parameters(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            if layer.weight is not None:
                out.extend([layer.weight, layer.bias])
        return out

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def spiking_layers(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.has_neuron]

    def weighted_layers(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.weight is not None]

    def copy(self) -> "SpikingNetwork":
        twin = copy.deepcopy(self)
        for p in twin.parameters():
            p.grad = None
        return twin

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {f"p{i}": p.data.copy() for i, p in enumerate(self.parameters())}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for i, p in enumerate(self.parameters()):
            src = np.asarray(arrays[f"p{i}"], dtype=np.float64)
            if src.shape != p.shape:
                raise ValueError(f"parameter {i}: stored shape {src.shape} != {p.shape}")
            p.data[...] = src


def build(spec: ArchitectureSpec, init_seed: int, lif: LIFParams | None = None, gain: float | None = None) -> SpikingNetwork:
    """Kaiming-uniform weights (bound ``gain * sqrt(6 / fan_in)``) from ``init_seed``; zero biases.

    ``gain`` defaults to ``spec.init_gain``. Without normalisation layers,
    small fan-in conv stacks need ``gain > 1`` for their hidden neurons to
    reach threshold at all.
    """
    gain = spec.init_gain if gain is None else gain
    if gain <= 0:
        raise ValueError(f"gain must be > 0, got {gain}")
    rng = np.random.default_rng(init_seed)
    layers = []
    for layer, in_shape, out_shape in spec.geometry():
        weight = bias = None
        if layer.kind == "conv":
            fan_in = in_shape[0] * layer.kernel**2
            bound = gain * np.sqrt(6.0 / fan_in)
            weight = Tensor(rng.uniform(-bound, bound, (layer.out, in_shape[0], layer.kernel, layer.kernel)), True)
            bias = Tensor(np.zeros(layer.out), True)
        elif layer.kind in ("affine", "readout"):
            bound = gain * np.sqrt(6.0 / in_shape[0])
            weight = Tensor(rng.uniform(-bound, bound, (layer.out, in_shape[0])), True)
            bias = Tensor(np.zeros(layer.out), True)
        layers.append(Layer(layer, in_shape, out_shape, weight, bias))
    return SpikingNetwork(spec, layers, lif or LIFParams())


def run_unrolled(net: SpikingNetwork, seq, record: dict[int, list[np.ndarray]] | None = None) -> Tensor:
    """Logits ``[T, B, C]`` for an input sequence ``[T, B, ...]``.

    Membrane states start at ``v_reset`` on every call. When ``record`` is a
    dict, the spike array of every spiking layer is appended per step under
    the layer index.
    """
    seq = seq.data if isinstance(seq, Tensor) else np.asarray(seq, dtype=np.float64)
    if seq.ndim < 2 or seq.shape[0] == 0:
        raise ValueError("run_unrolled: empty input sequence (T = 0)")
    states: dict[int, LIFLayerState] = {}
    logits = []
    for t in range(seq.shape[0]):
        x = Tensor(seq[t])
        for i, layer in enumerate(net.layers):
            x = layer.forward(x)
            if layer.has_neuron:
                state = states.get(i) or LIFLayerState.fresh(x.shape, net.lif)
                x, states[i] = lif_step(state, x, net.lif)
                if record is not None:
                    record.setdefault(i, []).append(x.data)
        logits.append(x)
    return stack(logits)


def temporal_readout(logits_per_step: Tensor) -> Tensor:
    """Softmax of the time-averaged logits."""
    if logits_per_step.shape[0] < 1:
        raise ValueError("temporal_readout: T must be >= 1")
    return softmax(mean(logits_per_step, axis=0))


def forward_probs(net: SpikingNetwork, seq) -> Tensor:
    return temporal_readout(run_unrolled(net, seq))


def firing_rates(net: SpikingNetwork, images: np.ndarray, encoder, T: int, batch_size: int = 256) -> tuple[list[float], float]:
    """Per spiking layer rate: spikes / (neurons * T * samples), plus their mean."""
    if len(images) == 0:
        raise ValueError("firing_rates: empty dataset")
    totals: dict[int, float] = {i: 0.0 for i in net.spiking_layers()}
    for start in range(0, len(images), batch_size):
        record: dict[int, list[np.ndarray]] = {}
        run_unrolled(net, encoder(images[start : start + batch_size], T), record)
        for i, steps in record.items():
            totals[i] += float(sum(s.sum() for s in steps))
    rates = [
        totals[i] / (np.prod(net.layers[i].out_shape) * T * len(images)) for i in net.spiking_layers()
    ]
    return rates, float(np.mean(rates)) if rates else 0.0


def predict_probs(net: SpikingNetwork, images: np.ndarray, encoder, T: int, batch_size: int = 256) -> np.ndarray:
    """Class distributions for every image, evaluated without a tape."""
    out = [
        forward_probs(net, encoder(images[start : start + batch_size], T)).data
        for start in range(0, len(images), batch_size)
    ]
    return np.concatenate(out) if out else np.zeros((0, net.arch.classes))


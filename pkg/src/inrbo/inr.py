"""Coordinate-MLP INRs trained with hand-written backprop and AdamW.

Each hidden layer computes ``act(W z + b)`` with its own activation family;
the output layer is linear. Training is full-batch MSE by default.
Arithmetic runs in the network's dtype (float32 unless asked otherwise;
gradient checks use float64).
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import DimensionMismatch, NonFiniteActivation, NonFiniteGradient
from .space import ActivationFamily, Configuration

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8
WEIGHT_DECAY = 1e-2
DIVERGENCE_LOSS = 1e6
# The Gaussian envelope is floored at exp(-50) ~ 2e-22, which keeps float32
# arithmetic out of slow subnormal territory for large s0
GAUSS_CUTOFF = 50.0


Scratch = Callable[[str], np.ndarray]


def _fresh(z: np.ndarray) -> Scratch:
    return lambda tag: np.empty_like(z)


def _envelope(t: np.ndarray, out: np.ndarray) -> np.ndarray:
    np.multiply(t, t, out=out)
    np.minimum(out, GAUSS_CUTOFF, out=out)
    np.negative(out, out=out)
    return np.exp(out, out=out)


@dataclass(frozen=True)
class ActivationKind:
    family: ActivationFamily
    omega0: float = 30.0
    s0: float = 10.0
    bias_scale: float = 0.0

    def forward(self, z: np.ndarray, scratch: Scratch | None = None) -> tuple[np.ndarray, tuple]:
        """Activation values plus whatever the derivative needs later.

        ``scratch(tag)`` supplies output arrays shaped like ``z``; by default
        each is freshly allocated.
        """
        new = scratch or _fresh(z)
        fam = self.family
        if fam is ActivationFamily.SIREN:
            wz = np.multiply(z, self.omega0, out=new("a"))
            return np.sin(wz, out=new("h")), (wz,)
        if fam is ActivationFamily.GAUSS:
            t = np.multiply(z, self.s0, out=new("a"))
            g = _envelope(t, new("h"))
            return g, (t, g)
        if fam is ActivationFamily.WIRE:
            t = np.multiply(z, self.s0, out=new("a"))
            g = _envelope(t, new("b"))
            wz = np.multiply(z, self.omega0, out=new("c"))
            c = np.cos(wz, out=new("d"))
            return np.multiply(c, g, out=new("h")), (t, g, wz, c)
        if fam is ActivationFamily.FINER:
            az = np.abs(z, out=new("a"))
            wu = np.add(az, 1.0, out=new("b"))
            wu *= z
            wu *= self.omega0
            return np.sin(wu, out=new("h")), (az, wu)
        raise ValueError(f"unknown activation family {fam}")

    def derivative(self, cache: tuple, scratch: Scratch | None = None) -> np.ndarray:
        new = scratch or _fresh(cache[0])
        fam = self.family
        if fam is ActivationFamily.SIREN:
            (wz,) = cache
            out = np.cos(wz, out=new("da"))
            out *= self.omega0
            return out
        if fam is ActivationFamily.GAUSS:
            t, g = cache
            out = np.multiply(t, g, out=new("da"))
            out *= -2.0 * self.s0
            return out
        if fam is ActivationFamily.WIRE:
            t, g, wz, c = cache
            out = np.sin(wz, out=new("da"))
            out *= -self.omega0
            tc = np.multiply(t, c, out=new("db"))
            tc *= 2.0 * self.s0
            out -= tc
            out *= g
            return out
        if fam is ActivationFamily.FINER:
            # (|z|+1)z has derivative 2|z|+1, which is omega0-continuous at 0
            az, wu = cache
            out = np.multiply(az, 2.0, out=new("da"))
            out += 1.0
            out *= np.cos(wu, out=new("db"))
            out *= self.omega0
            return out
        raise ValueError(f"unknown activation family {fam}")

    def __call__(self, z) -> np.ndarray:
        return self.forward(np.asarray(z))[0]


class Workspace:
    """Arrays reused across training steps.

    Allocating fresh multi-megabyte temporaries every step costs as much as
    the arithmetic (page faults on each new block), so training keeps one
    buffer per (name, shape) for the whole run.
    """

    def __init__(self):
        self._arrays: dict = {}

    def get(self, key: tuple, shape: tuple, dtype) -> np.ndarray:
        slot = (key, shape)
        arr = self._arrays.get(slot)
        if arr is None:
            arr = self._arrays[slot] = np.empty(shape, dtype=dtype)
        return arr

    def scratch(self, layer: int, like: np.ndarray) -> Scratch:
        return lambda tag: self.get((layer, tag), like.shape, like.dtype)


@dataclass(frozen=True)
class HiddenLayer:
    width: int
    activation: ActivationKind
    siren_init: bool = True
    weight_range: float = 1.0
    lr: float = 1e-4


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    output_dim: int
    layers: tuple[HiddenLayer, ...]
    pe_bands: int = 0
    pe_scale: float = 1.0
    output_init_halfwidth: float | None = None
    weight_decay: float = WEIGHT_DECAY
    dtype: str = "float32"

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a network needs at least one hidden layer")
        if any(layer.width < 1 for layer in self.layers):
            raise ValueError("hidden widths must be at least 1")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input and output dimensions must be at least 1")

    @property
    def feature_dim(self) -> int:
        return 2 * self.pe_bands * self.input_dim if self.pe_bands else self.input_dim

    @property
    def fan_ins(self) -> list[int]:
        return [self.feature_dim] + [layer.width for layer in self.layers]

    @property
    def learning_rates(self) -> list[float]:
        # the output layer shares the last hidden layer's rate
        rates = [layer.lr for layer in self.layers]
        return rates + [rates[-1]]

    @classmethod
    def from_configuration(cls, config: Configuration, input_dim: int, output_dim: int, *,
                           width: int = 256, pe_bands: int = 6,
                           output_init_halfwidth: float | None = None,
                           dtype: str = "float32") -> "NetworkSpec":
        layers = tuple(
            HiddenLayer(
                width=width,
                activation=ActivationKind(choice.activation, choice.omega0, choice.s0, choice.bias_scale),
                siren_init=choice.siren_init,
                weight_range=choice.weight_range,
                lr=choice.lr,
            )
            for choice in config.layers
        )
        return cls(input_dim=input_dim, output_dim=output_dim, layers=layers,
                   pe_bands=pe_bands if config.use_pe else 0, pe_scale=config.pe_scale,
                   output_init_halfwidth=output_init_halfwidth, dtype=dtype)


@dataclass
class NetworkState:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    m_weights: list[np.ndarray]
    v_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_biases: list[np.ndarray]
    step: int = 0

    def copy(self) -> "NetworkState":
        dup = lambda arrays: [a.copy() for a in arrays]  # noqa: E731
        return NetworkState(dup(self.weights), dup(self.biases), dup(self.m_weights),
                            dup(self.v_weights), dup(self.m_biases), dup(self.v_biases), self.step)


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class TrainReport:
    final_loss: float
    history: list[tuple[int, float]] = field(default_factory=list)
    epochs_run: int = 0
    diverged: bool = False
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "final_loss": self.final_loss,
            "epochs_run": self.epochs_run,
            "diverged": self.diverged,
            "wall_time": self.wall_time,
            "history": [[e, v] for e, v in self.history],
        }


def positional_encode(coords, bands: int, scale: float) -> np.ndarray:
    """Octave Fourier features ``sin/cos(2^j * scale * pi * x)``.

    Output columns are grouped by band: for band ``j`` the ``d`` sine
    features come first, then the ``d`` cosine features.
    """
    if bands < 1:
        raise ValueError("bands must be at least 1")
    coords = np.asarray(coords)
    parts = []
    for j in range(bands):
        arg = (2.0 ** j) * scale * math.pi * coords
        parts.append(np.sin(arg))
        parts.append(np.cos(arg))
    return np.concatenate(parts, axis=1)


def init_halfwidths(spec: NetworkSpec) -> list[float]:
    """Uniform-init half-width for every weight matrix, output layer last."""
    out = []
    for i, layer in enumerate(spec.layers):
        fan_in = spec.fan_ins[i]
        if i > 0 and layer.siren_init:
            base = math.sqrt(6.0 / fan_in) / layer.activation.omega0
        else:
            base = 1.0 / fan_in
        out.append(layer.weight_range * base)
    if spec.output_init_halfwidth is not None:
        out.append(spec.output_init_halfwidth)
    else:
        omega = spec.layers[-1].activation.omega0
        out.append(math.sqrt(6.0 / spec.layers[-1].width) / max(omega, 1.0))
    return out


def init_network(spec: NetworkSpec, rng: np.random.Generator) -> NetworkState:
    dtype = np.dtype(spec.dtype)
    widths = [layer.width for layer in spec.layers] + [spec.output_dim]
    weights, biases = [], []
    for i, (fan_in, fan_out, r) in enumerate(zip(spec.fan_ins, widths, init_halfwidths(spec))):
        weights.append(rng.uniform(-r, r, size=(fan_in, fan_out)).astype(dtype))
        k = spec.layers[i].activation.bias_scale if i < len(spec.layers) else 0.0
        finer = i < len(spec.layers) and spec.layers[i].activation.family is ActivationFamily.FINER
        if finer and k > 0:
            biases.append(rng.uniform(-k, k, size=fan_out).astype(dtype))
        else:
            biases.append(np.zeros(fan_out, dtype=dtype))
    zeros = lambda arrays: [np.zeros_like(a) for a in arrays]  # noqa: E731
    return NetworkState(weights, biases, zeros(weights), zeros(weights), zeros(biases), zeros(biases))


def _features(spec: NetworkSpec, coords) -> np.ndarray:
    x = np.asarray(coords, dtype=spec.dtype)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise DimensionMismatch(f"coords must be N x {spec.input_dim}, got shape {x.shape}")
    if spec.pe_bands:
        x = positional_encode(x, spec.pe_bands, spec.pe_scale).astype(spec.dtype, copy=False)
    return x


def _forward_pass(spec: NetworkSpec, state: NetworkState, coords, ws: Workspace | None = None):
    h = _features(spec, coords)
    inputs, caches = [h], []
    for i, layer in enumerate(spec.layers):
        if ws is None:
            z = h @ state.weights[i]
            scratch = None
        else:
            z = np.matmul(h, state.weights[i], out=ws.get((i, "z"), (h.shape[0], layer.width), h.dtype))
            scratch = ws.scratch(i, z)
        z += state.biases[i]
        h, cache = layer.activation.forward(z, scratch)
        inputs.append(h)
        caches.append(cache)
    out = h @ state.weights[-1]
    out += state.biases[-1]
    # a non-finite hidden value always reaches the output, so one check suffices
    if not np.isfinite(np.sum(out, dtype=np.float64)) and out.size:
        for i, hidden in enumerate(inputs[1:]):
            if not np.all(np.isfinite(hidden)):
                raise NonFiniteActivation(i)
        raise NonFiniteActivation(len(spec.layers))
    return out, inputs, caches


def forward(spec: NetworkSpec, state: NetworkState, coords) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        return _forward_pass(spec, state, coords)[0]


def loss_and_gradients(spec: NetworkSpec, state: NetworkState, coords, targets,
                       workspace: Workspace | None = None) -> tuple[float, Gradients]:
    """Mean squared error over all outputs and its exact gradients.

    A :class:`Workspace` lets repeated calls reuse their temporaries.
    """
    targets = np.asarray(targets, dtype=spec.dtype)
    n = targets.shape[0]
    if targets.ndim != 2 or targets.shape[1] != spec.output_dim or np.shape(coords)[0] != n:
        raise DimensionMismatch("coords and targets disagree with each other or with the network")
    with np.errstate(over="ignore", invalid="ignore"):
        ws = workspace
        out, inputs, caches = _forward_pass(spec, state, coords, ws)
        resid = out - targets
        loss = float(np.mean(np.square(resid, dtype=np.float64))) if n else 0.0
        delta = resid * (2.0 / max(resid.size, 1))
        grad_w = [None] * len(state.weights)
        grad_b = [None] * len(state.biases)
        ones = np.ones(n, dtype=delta.dtype)
        grad_w[-1] = inputs[-1].T @ delta
        grad_b[-1] = ones @ delta
        upstream = delta @ state.weights[-1].T
        for i in range(len(spec.layers) - 1, -1, -1):
            scratch = None if ws is None else ws.scratch(i, inputs[i + 1])
            dz = spec.layers[i].activation.derivative(caches[i], scratch)
            dz *= upstream
            grad_w[i] = inputs[i].T @ dz
            grad_b[i] = ones @ dz
            if i:
                if ws is None:
                    upstream = dz @ state.weights[i].T
                else:
                    upstream = np.matmul(dz, state.weights[i].T,
                                         out=ws.get((i, "up"), (n, spec.layers[i - 1].width), dz.dtype))
    for g in grad_w + grad_b:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("non-finite gradient")
    return loss, Gradients(grad_w, grad_b)


def adamw_step(spec: NetworkSpec, state: NetworkState, grads: Gradients) -> NetworkState:
    """One decoupled-weight-decay Adam update, in place; returns ``state``.

    Weight decay is scaled by the layer's learning rate (the PyTorch AdamW
    convention), so a zero rate freezes a layer entirely.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - BETA1 ** t
    c2 = 1.0 - BETA2 ** t
    wd = spec.weight_decay
    for i, lr in enumerate(spec.learning_rates):
        for p, g, m, v in ((state.weights[i], grads.weights[i], state.m_weights[i], state.v_weights[i]),
                           (state.biases[i], grads.biases[i], state.m_biases[i], state.v_biases[i])):
            m *= BETA1
            m += (1.0 - BETA1) * g
            v *= BETA2
            v += (1.0 - BETA2) * (g * g)
            if lr == 0.0:
                continue
            if wd:
                p *= 1.0 - lr * wd
            p -= (lr / c1) * m / (np.sqrt(v / c2) + EPS)
    return state


def train(spec: NetworkSpec, coords, targets, epochs: int, rng: np.random.Generator, *,
          batch: int | None = None, history_every: int | None = None) -> tuple[NetworkState, TrainReport]:
    """Train from a fresh initialization.

    Divergence (non-finite values or loss above 1e6) stops training early and
    is reported in the returned :class:`TrainReport`; it never raises.
    """
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    start = time.perf_counter()
    state = init_network(spec, rng)
    x = _features(spec, coords)
    y = np.asarray(targets, dtype=spec.dtype)
    n = y.shape[0]
    every = history_every or max(1, epochs // 50)
    history: list[tuple[int, float]] = []
    diverged = False
    epoch = 0
    pe_spec = _without_pe(spec)
    ws = Workspace()
    for epoch in range(1, epochs + 1):
        try:
            if batch is None or batch >= n:
                loss, grads = loss_and_gradients(pe_spec, state, x, y, ws)
                losses = [loss]
                if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
                    raise NonFiniteGradient("loss diverged")
                adamw_step(pe_spec, state, grads)
            else:
                order = rng.permutation(n)
                losses = []
                for lo in range(0, n, batch):
                    idx = order[lo:lo + batch]
                    loss, grads = loss_and_gradients(pe_spec, state, x[idx], y[idx], ws)
                    if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
                        raise NonFiniteGradient("loss diverged")
                    losses.append(loss * len(idx) / n)
                    adamw_step(pe_spec, state, grads)
                loss = float(sum(losses))
        except (NonFiniteActivation, NonFiniteGradient):
            diverged = True
            history.append((epoch, math.inf))
            break
        if epoch % every == 0 or epoch == 1 or epoch == epochs:
            history.append((epoch, loss))
    final = math.inf
    if not diverged:
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                out = _forward_pass(pe_spec, state, x)[0]
            final = float(np.mean(np.square(out - y, dtype=np.float64)))
        except NonFiniteActivation:
            diverged = True
        if not math.isfinite(final) or final > DIVERGENCE_LOSS:
            diverged = True
    report = TrainReport(final_loss=final, history=history, epochs_run=epoch, diverged=diverged,
                         wall_time=time.perf_counter() - start)
    return state, report


def _without_pe(spec: NetworkSpec) -> NetworkSpec:
    """Same network but fed precomputed features, so encoding happens once."""
    if not spec.pe_bands:
        return spec
    return replace(spec, input_dim=spec.feature_dim, pe_bands=0)


__all__ = [
    "ActivationKind", "Gradients", "HiddenLayer", "NetworkSpec", "NetworkState", "TrainReport", "Workspace",
    "adamw_step", "forward", "init_halfwidths", "init_network", "loss_and_gradients",
    "positional_encode", "train",
]

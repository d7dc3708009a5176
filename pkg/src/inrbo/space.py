"""The mixed categorical/continuous INR configuration space.

A :class:`SearchSpace` describes ``L`` layers; each layer picks an activation
family, a SIREN-style-init flag and five continuous parameters. A global
positional-encoding switch (with its scale) can be added on top.

Configurations are mapped to points in ``[0, 1]^D`` for the surrogate:

* continuous parameters are min-max normalized (in log space for log bounds),
* booleans become 0/1,
* each layer's activation becomes a one-hot block.

Encoded layout, in order: ``[use_pe, pe_scale]`` (only when PE is allowed),
then per layer ``[one-hot(activation), siren_init, omega0, s0, bias_scale,
weight_range, lr]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .docs import Doc, dump_document, load_document, parse_document
from .errors import DimensionMismatch, InvalidSpace, OutOfBounds


class ActivationFamily(str, Enum):
    SIREN = "siren"
    GAUSS = "gauss"
    WIRE = "wire"
    FINER = "finer"


LAYER_FIELDS = ("omega0", "s0", "bias_scale", "weight_range", "lr")
BOUNDED_FIELDS = LAYER_FIELDS + ("pe_scale",)


@dataclass(frozen=True)
class Bound:
    low: float
    high: float
    scale: str = "linear"

    def __post_init__(self):
        if self.scale not in ("linear", "log"):
            raise InvalidSpace(f"unknown scale {self.scale!r}")
        if not (math.isfinite(self.low) and math.isfinite(self.high)) or not self.low < self.high:
            raise InvalidSpace(f"need low < high, got [{self.low}, {self.high}]")
        if self.scale == "log" and self.low <= 0:
            raise InvalidSpace(f"log-scaled bound needs low > 0, got {self.low}")

    def normalize(self, value: float) -> float:
        if self.scale == "log":
            lo, hi = math.log(self.low), math.log(self.high)
            return (math.log(value) - lo) / (hi - lo)
        return (value - self.low) / (self.high - self.low)

    def denormalize(self, u: float) -> float:
        u = float(u)
        if self.scale == "log":
            lo, hi = math.log(self.low), math.log(self.high)
            value = math.exp(lo + u * (hi - lo))
        else:
            value = self.low + u * (self.high - self.low)
        return min(max(value, self.low), self.high)

    @property
    def midpoint(self) -> float:
        return self.denormalize(0.5)

    def contains(self, value: float) -> bool:
        return self.low <= value <= self.high


DEFAULT_BOUNDS: Mapping[str, Bound] = {
    "omega0": Bound(1.0, 100.0, "log"),
    "s0": Bound(0.5, 50.0, "log"),
    "bias_scale": Bound(0.0, 20.0, "linear"),
    "weight_range": Bound(0.25, 4.0, "linear"),
    "lr": Bound(1e-5, 1e-2, "log"),
    "pe_scale": Bound(1.0, 64.0, "log"),
}


@dataclass(frozen=True)
class LayerChoice:
    activation: ActivationFamily
    siren_init: bool
    omega0: float
    s0: float
    bias_scale: float
    weight_range: float
    lr: float


@dataclass(frozen=True)
class Configuration:
    use_pe: bool
    pe_scale: float
    layers: tuple[LayerChoice, ...]

    def to_dict(self) -> dict:
        return {
            "use_pe": self.use_pe,
            "pe_scale": self.pe_scale,
            "layers": [
                {
                    "activation": layer.activation.value,
                    "siren_init": layer.siren_init,
                    **{name: getattr(layer, name) for name in LAYER_FIELDS},
                }
                for layer in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Configuration":
        return cls(
            use_pe=bool(data["use_pe"]),
            pe_scale=float(data["pe_scale"]),
            layers=tuple(
                LayerChoice(
                    activation=ActivationFamily(layer["activation"]),
                    siren_init=bool(layer["siren_init"]),
                    **{name: float(layer[name]) for name in LAYER_FIELDS},
                )
                for layer in data["layers"]
            ),
        )


@dataclass(frozen=True)
class Layout:
    """Where each kind of coordinate lives in an encoded vector.

    ``cont_idx`` covers every coordinate handled by the Matérn factor
    (continuous parameters and binary flags); ``cat_blocks`` lists the one-hot
    blocks, each a tuple of coordinate indices.
    """

    dim: int
    cont_idx: tuple[int, ...]
    cat_blocks: tuple[tuple[int, ...], ...] = ()

    @property
    def cat_idx(self) -> tuple[int, ...]:
        return tuple(i for block in self.cat_blocks for i in block)

    @classmethod
    def continuous(cls, dim: int) -> "Layout":
        return cls(dim, tuple(range(dim)), ())


@dataclass(frozen=True)
class SearchSpace:
    """Per-layer activation sets, parameter bounds and surrogate options."""

    activations: tuple[tuple[ActivationFamily, ...], ...]
    bounds: Mapping[str, Bound] = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    pe_allowed: bool = True
    nu: float = 2.5
    ard: str = "block"

    def __post_init__(self):
        if len(self.activations) < 1:
            raise InvalidSpace("layer_count must be at least 1")
        for i, acts in enumerate(self.activations):
            if len(acts) < 1:
                raise InvalidSpace(f"layer {i} has an empty activation set")
            if len(set(acts)) != len(acts):
                raise InvalidSpace(f"layer {i} lists an activation twice")
        missing = [name for name in BOUNDED_FIELDS if name not in self.bounds]
        if missing:
            raise InvalidSpace(f"missing bounds for {', '.join(missing)}")
        if self.nu not in (0.5, 1.5, 2.5):
            raise InvalidSpace(f"nu must be one of 0.5, 1.5, 2.5, got {self.nu}")
        if self.ard not in ("block", "full"):
            raise InvalidSpace(f"ard must be 'block' or 'full', got {self.ard!r}")

    @classmethod
    def uniform(cls, layer_count: int, activations: Sequence[ActivationFamily | str] = tuple(ActivationFamily),
                **kwargs) -> "SearchSpace":
        """Same activation set on every layer."""
        if layer_count < 1:
            raise InvalidSpace("layer_count must be at least 1")
        acts = tuple(ActivationFamily(a) for a in activations)
        return cls(activations=(acts,) * layer_count, **kwargs)

    @property
    def layer_count(self) -> int:
        return len(self.activations)

    @property
    def layout(self) -> Layout:
        return _layout(self)

    def default_configuration(self) -> Configuration:
        """Midpoint of every continuous range, first category, flags at 0.5 -> true."""
        point = np.full(dimension(self), 0.5)
        return decode(self, point)


def _layer_offset(space: SearchSpace) -> int:
    return 2 if space.pe_allowed else 0


def _layer_width(space: SearchSpace, layer: int) -> int:
    return len(space.activations[layer]) + 1 + len(LAYER_FIELDS)


def dimension(space: SearchSpace) -> int:
    if space.layer_count < 1:
        raise InvalidSpace("layer_count must be at least 1")
    return _layer_offset(space) + sum(_layer_width(space, i) for i in range(space.layer_count))


def _layout(space: SearchSpace) -> Layout:
    cont: list[int] = []
    blocks: list[tuple[int, ...]] = []
    pos = 0
    if space.pe_allowed:
        cont += [0, 1]
        pos = 2
    for i in range(space.layer_count):
        k = len(space.activations[i])
        blocks.append(tuple(range(pos, pos + k)))
        pos += k
        cont += list(range(pos, pos + 1 + len(LAYER_FIELDS)))
        pos += 1 + len(LAYER_FIELDS)
    return Layout(pos, tuple(cont), tuple(blocks))


def layer_slices(space: SearchSpace):
    pos = _layer_offset(space)
    for i in range(space.layer_count):
        k = len(space.activations[i])
        yield i, pos, k
        pos += _layer_width(space, i)


def real_coordinates(space: SearchSpace) -> list[int]:
    """Indices of continuous (non-binary, non-one-hot) coordinates."""
    idx = [1] if space.pe_allowed else []
    for _, pos, k in layer_slices(space):
        idx += list(range(pos + k + 1, pos + k + 1 + len(LAYER_FIELDS)))
    return idx


def binary_coordinates(space: SearchSpace) -> list[int]:
    idx = [0] if space.pe_allowed else []
    idx += [pos + k for _, pos, k in layer_slices(space)]
    return idx


def validate(space: SearchSpace, config: Configuration) -> None:
    """Raise :class:`OutOfBounds` naming the first offending field."""
    if len(config.layers) != space.layer_count:
        raise OutOfBounds("layers", f"expected {space.layer_count} layers, got {len(config.layers)}")
    if config.use_pe and not space.pe_allowed:
        raise OutOfBounds("use_pe", "positional encoding is not allowed in this space")
    if not (isinstance(config.pe_scale, (int, float)) and math.isfinite(config.pe_scale)):
        raise OutOfBounds("pe_scale", "must be a finite number")
    if config.use_pe and not space.bounds["pe_scale"].contains(config.pe_scale):
        b = space.bounds["pe_scale"]
        raise OutOfBounds("pe_scale", f"{config.pe_scale} outside [{b.low}, {b.high}]")
    for i, layer in enumerate(config.layers):
        if layer.activation not in space.activations[i]:
            allowed = ", ".join(a.value for a in space.activations[i])
            raise OutOfBounds(f"layers[{i}].activation",
                              f"{layer.activation.value} not in {{{allowed}}}")
        for name in LAYER_FIELDS:
            value = getattr(layer, name)
            b = space.bounds[name]
            if not (isinstance(value, (int, float)) and math.isfinite(value)):
                raise OutOfBounds(f"layers[{i}].{name}", "must be a finite number")
            if not b.contains(value):
                raise OutOfBounds(f"layers[{i}].{name}", f"{value} outside [{b.low}, {b.high}]")


def encode(space: SearchSpace, config: Configuration) -> np.ndarray:
    validate(space, config)
    out = np.empty(dimension(space))
    if space.pe_allowed:
        out[0] = 1.0 if config.use_pe else 0.0
        out[1] = space.bounds["pe_scale"].normalize(config.pe_scale) if config.use_pe else 0.5
    for i, pos, k in layer_slices(space):
        layer = config.layers[i]
        out[pos:pos + k] = 0.0
        out[pos + space.activations[i].index(layer.activation)] = 1.0
        out[pos + k] = 1.0 if layer.siren_init else 0.0
        for j, name in enumerate(LAYER_FIELDS):
            out[pos + k + 1 + j] = space.bounds[name].normalize(getattr(layer, name))
    return out


def decode(space: SearchSpace, point) -> Configuration:
    point = np.asarray(point, dtype=np.float64)
    if point.ndim != 1 or point.shape[0] != dimension(space):
        raise DimensionMismatch(f"expected a vector of length {dimension(space)}, got shape {point.shape}")
    p = np.clip(point, 0.0, 1.0)
    pe_bound = space.bounds["pe_scale"]
    use_pe = bool(space.pe_allowed and p[0] >= 0.5)
    pe_scale = pe_bound.denormalize(p[1]) if use_pe else pe_bound.midpoint
    layers = []
    for i, pos, k in layer_slices(space):
        act = space.activations[i][int(np.argmax(p[pos:pos + k]))]
        values = {name: space.bounds[name].denormalize(p[pos + k + 1 + j])
                  for j, name in enumerate(LAYER_FIELDS)}
        layers.append(LayerChoice(activation=act, siren_init=bool(p[pos + k] >= 0.5), **values))
    return Configuration(use_pe=use_pe, pe_scale=pe_scale, layers=tuple(layers))


def canonicalize(space: SearchSpace, point) -> np.ndarray:
    """Project an arbitrary point onto the set of valid encodings."""
    return encode(space, decode(space, point))


def lhs_unit(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` x ``d`` Latin hypercube in the unit cube (one sample per bin per column)."""
    cells = np.argsort(rng.random((d, n)), axis=1).T
    return (cells + rng.random((n, d))) / n


def sample_lhs(space: SearchSpace, n: int, rng: np.random.Generator) -> list[Configuration]:
    """Space-filling design: stratified continuous and binary dims, uniform categories."""
    if n < 1:
        raise ValueError("n must be at least 1")
    d = dimension(space)
    strat = real_coordinates(space) + binary_coordinates(space)
    points = np.zeros((n, d))
    points[:, strat] = lhs_unit(n, len(strat), rng)
    for i, pos, k in layer_slices(space):
        choice = rng.integers(0, k, size=n)
        points[:, pos:pos + k] = 0.0
        points[np.arange(n), pos + choice] = 1.0
    return [decode(space, row) for row in points]


# -- space files -----------------------------------------------------------

def space_from_doc(doc: Doc) -> SearchSpace:
    layer_count = doc.number(("layer_count",), integer=True, minimum=1)
    per_layer = doc.get(("layer_activations",), None)
    if per_layer is not None:
        if not isinstance(per_layer, list) or len(per_layer) != layer_count:
            raise doc.error(("layer_activations",), f"expected a list of {layer_count} activation lists")
        raw_sets = [(("layer_activations", i), acts) for i, acts in enumerate(per_layer)]
    else:
        acts = doc.get(("activations",), [a.value for a in ActivationFamily])
        raw_sets = [(("activations",), acts)] * layer_count
    sets = []
    for path, acts in raw_sets:
        if not isinstance(acts, list) or not acts:
            raise doc.error(path, "expected a non-empty list of activation names")
        parsed = []
        for j, name in enumerate(acts):
            try:
                parsed.append(ActivationFamily(str(name).lower()))
            except ValueError:
                allowed = ", ".join(a.value for a in ActivationFamily)
                raise doc.error(path + (j,), f"unknown activation {name!r} (allowed: {allowed})") from None
        if len(set(parsed)) != len(parsed):
            raise doc.error(path, "activation listed twice")
        sets.append(tuple(parsed))

    bounds = dict(DEFAULT_BOUNDS)
    raw_bounds = doc.get(("bounds",), {})
    if not isinstance(raw_bounds, dict):
        raise doc.error(("bounds",), "expected a mapping of parameter bounds")
    for name in raw_bounds:
        if name not in BOUNDED_FIELDS:
            raise doc.error(("bounds", name), f"unknown parameter (allowed: {', '.join(BOUNDED_FIELDS)})")
        base = DEFAULT_BOUNDS[name]
        low = doc.number(("bounds", name, "low"), base.low)
        high = doc.number(("bounds", name, "high"), base.high)
        scale = doc.get(("bounds", name, "scale"), base.scale)
        try:
            bounds[name] = Bound(float(low), float(high), scale)
        except InvalidSpace as exc:
            raise doc.error(("bounds", name), str(exc)) from None

    pe_allowed = doc.boolean(("pe_allowed",), True)
    nu = doc.number(("kernel", "nu"), 2.5)
    if nu not in (0.5, 1.5, 2.5):
        raise doc.error(("kernel", "nu"), f"must be one of 0.5, 1.5, 2.5, got {nu}")
    ard = doc.get(("kernel", "ard"), "block")
    if ard not in ("block", "full"):
        raise doc.error(("kernel", "ard"), f"must be 'block' or 'full', got {ard!r}")
    known = {"layer_count", "activations", "layer_activations", "bounds", "pe_allowed", "kernel"}
    for key in doc.data:
        if key not in known:
            raise doc.error((key,), "unknown field")
    return SearchSpace(activations=tuple(sets), bounds=bounds, pe_allowed=pe_allowed,
                       nu=float(nu), ard=ard)


def reference_configuration(family: ActivationFamily | str, layer_count: int, *, omega0: float = 30.0,
                            s0: float = 10.0, bias_scale: float | None = None,
                            lr: float = 1e-4) -> Configuration:
    """Hand-set configuration with one family on every layer and no PE.

    Sine families use SIREN init; FINER takes ``bias_scale`` (its ``k``)
    defaulting to 10, other families to 0.
    """
    family = ActivationFamily(family)
    sine = family in (ActivationFamily.SIREN, ActivationFamily.FINER)
    if bias_scale is None:
        bias_scale = 10.0 if family is ActivationFamily.FINER else 0.0
    layer = LayerChoice(family, sine, omega0, s0, bias_scale, 1.0, lr)
    return Configuration(False, 1.0, (layer,) * layer_count)


def load_space(path: str | Path) -> SearchSpace:
    return space_from_doc(load_document(path))


def parse_space(text: str, source: str = "<string>") -> SearchSpace:
    return space_from_doc(parse_document(text, source))


def space_to_dict(space: SearchSpace) -> dict:
    first = space.activations[0]
    data: dict = {"layer_count": space.layer_count}
    if all(acts == first for acts in space.activations):
        data["activations"] = [a.value for a in first]
    else:
        data["layer_activations"] = [[a.value for a in acts] for acts in space.activations]
    data["pe_allowed"] = space.pe_allowed
    data["kernel"] = {"nu": space.nu, "ard": space.ard}
    data["bounds"] = {name: {"low": b.low, "high": b.high, "scale": b.scale}
                      for name, b in space.bounds.items()}
    return data


def dump_space(space: SearchSpace) -> str:
    return dump_document(space_to_dict(space))


# -- configuration files ---------------------------------------------------

def configuration_from_doc(doc: Doc, space: SearchSpace) -> Configuration:
    """Build and validate a configuration; errors carry file, line and field."""
    use_pe = doc.boolean(("use_pe",), False)
    pe_scale = doc.number(("pe_scale",), space.bounds["pe_scale"].midpoint)
    layers_raw = doc.get(("layers",))
    if not isinstance(layers_raw, list):
        raise doc.error(("layers",), "expected a list of layers")
    defaults = space.default_configuration()
    layers = []
    for i, raw in enumerate(layers_raw):
        if not isinstance(raw, dict):
            raise doc.error(("layers", i), "expected a mapping")
        name = doc.get(("layers", i, "activation"))
        try:
            act = ActivationFamily(str(name).lower())
        except ValueError:
            raise doc.error(("layers", i, "activation"), f"unknown activation {name!r}") from None
        base = defaults.layers[min(i, len(defaults.layers) - 1)]
        values = {f: float(doc.number(("layers", i, f), getattr(base, f))) for f in LAYER_FIELDS}
        siren_init = doc.boolean(("layers", i, "siren_init"), base.siren_init)
        layers.append(LayerChoice(activation=act, siren_init=siren_init, **values))
    config = Configuration(use_pe=use_pe, pe_scale=float(pe_scale), layers=tuple(layers))
    try:
        validate(space, config)
    except OutOfBounds as exc:
        path = tuple(int(p) if p.isdigit() else p
                     for p in exc.field.replace("[", ".").replace("]", "").split("."))
        raise doc.error(path, str(exc).split(": ", 1)[1]) from None
    if not use_pe:
        config = replace(config, pe_scale=space.bounds["pe_scale"].midpoint)
    return config


def load_configuration(path: str | Path, space: SearchSpace) -> Configuration:
    return configuration_from_doc(load_document(path), space)


def dump_configuration(config: Configuration) -> str:
    return dump_document(config.to_dict())


__all__ = [
    "ActivationFamily", "Bound", "Configuration", "DEFAULT_BOUNDS", "LAYER_FIELDS",
    "LayerChoice", "Layout", "SearchSpace", "canonicalize", "decode",
    "dimension", "dump_configuration", "dump_space", "encode", "lhs_unit",
    "load_configuration", "load_space", "parse_space", "reference_configuration", "sample_lhs",
    "validate",
]

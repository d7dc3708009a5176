import itertools
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inrbo.errors import ConfigError, DimensionMismatch, InvalidSpace, OutOfBounds
from inrbo.numerics import make_rng
from inrbo.space import (ActivationFamily, Configuration, LayerChoice, SearchSpace, binary_coordinates,
                         canonicalize, decode, dimension, dump_space, encode, layer_slices, lhs_unit,
                         load_configuration, parse_space, real_coordinates, sample_lhs)

ALL = tuple(ActivationFamily)


def full_space(layers=4, **kw):
    return SearchSpace.uniform(layers, ALL, **kw)


def test_dimension_formula():
    assert dimension(full_space(4)) == 42
    assert dimension(SearchSpace.uniform(1, ALL[:2])) == 10
    with pytest.raises(InvalidSpace):
        SearchSpace.uniform(0)


def test_encode_boundaries_and_one_hot():
    space = full_space(1)
    base = space.default_configuration()
    low = replace(base.layers[0], omega0=1.0, activation=ActivationFamily.GAUSS)
    p = encode(space, replace(base, layers=(low,)))
    _, pos, k = next(layer_slices(space))
    assert p[pos + k + 1] == 0.0
    np.testing.assert_array_equal(p[pos:pos + k], [0, 1, 0, 0])
    mid = replace(low, omega0=math.sqrt(1.0 * 100.0))
    assert math.isclose(encode(space, replace(base, layers=(mid,)))[pos + k + 1], 0.5, abs_tol=1e-15)


def test_encode_rejects_out_of_bounds_naming_field():
    space = full_space(3)
    base = space.default_configuration()
    bad = replace(base.layers[2], omega0=500.0)
    with pytest.raises(OutOfBounds) as err:
        encode(space, replace(base, layers=base.layers[:2] + (bad,)))
    assert err.value.field == "layers[2].omega0"


def test_decode_tie_goes_to_lowest_index():
    space = full_space(1)
    p = np.full(dimension(space), 0.5)
    _, pos, k = next(layer_slices(space))
    p[pos:pos + k] = [0.3, 0.3, 0.2, 0.2]
    assert decode(space, p).layers[0].activation == ActivationFamily.SIREN
    p[pos:pos + k] = [0.1, 0.3, 0.3, 0.2]
    assert decode(space, p).layers[0].activation == ActivationFamily.GAUSS


def test_decode_wrong_length():
    with pytest.raises(DimensionMismatch):
        decode(full_space(1), np.zeros(3))


def test_roundtrip_random_configs():
    space = full_space(4)
    configs = sample_lhs(space, 1000, make_rng(0))
    for c in configs:
        back = decode(space, encode(space, c))
        assert back.use_pe == c.use_pe
        for a, b in zip(back.layers, c.layers):
            assert a.activation == b.activation and a.siren_init == b.siren_init
            for name in ("omega0", "s0", "bias_scale", "weight_range", "lr"):
                assert math.isclose(getattr(a, name), getattr(b, name), rel_tol=1e-12, abs_tol=1e-12)
        if c.use_pe:
            assert math.isclose(back.pe_scale, c.pe_scale, rel_tol=1e-12)


def test_roundtrip_exhaustive_categories():
    space = SearchSpace.uniform(2, ALL)
    rng = make_rng(1)
    for combo in itertools.product(ALL, ALL, (False, True), (False, True)):
        for _ in range(100 // 16 + 1):
            p = rng.random(dimension(space))
            c = decode(space, p)
            layers = tuple(replace(layer, activation=a, siren_init=combo[2 + i % 2])
                           for i, (layer, a) in enumerate(zip(c.layers, combo[:2])))
            c = replace(c, layers=layers)
            assert np.allclose(encode(space, decode(space, encode(space, c))), encode(space, c),
                               atol=1e-12, rtol=0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-0.5, 1.5), min_size=42, max_size=42))
def test_encode_image_is_valid(values):
    space = full_space(4)
    p = canonicalize(space, np.array(values))
    assert np.all((p >= 0) & (p <= 1))
    for _, pos, k in layer_slices(space):
        block = p[pos:pos + k]
        assert set(np.unique(block)) <= {0.0, 1.0} and block.sum() == 1.0
    assert set(np.unique(p[binary_coordinates(space)])) <= {0.0, 1.0}
    # canonical points are fixed points
    assert np.allclose(canonicalize(space, p), p, atol=1e-12, rtol=0)


def test_inactive_pe_scale_encodes_to_midpoint():
    space = full_space(1)
    c = replace(space.default_configuration(), use_pe=False, pe_scale=3.0)
    assert encode(space, c)[1] == 0.5


@pytest.mark.parametrize("n", [2, 4, 5, 30])
def test_lhs_stratification(n):
    space = full_space(3)
    pts = np.array([encode(space, c) for c in sample_lhs(space, n, make_rng(n))])
    for j in real_coordinates(space):
        if j == 1:
            continue  # pe_scale is canonicalized to 0.5 when the sampled PE flag is off
        bins = np.minimum((pts[:, j] * n).astype(int), n - 1)
        assert sorted(bins) == list(range(n)), j
    raw = lhs_unit(n, 7, make_rng(n))
    for j in range(7):
        assert sorted((raw[:, j] * n).astype(int)) == list(range(n))


def test_lhs_binary_dims_balanced():
    space = full_space(2)
    pts = np.array([encode(space, c) for c in sample_lhs(space, 30, make_rng(5))])
    for j in binary_coordinates(space):
        assert pts[:, j].sum() == 15


def test_lhs_single_and_deterministic():
    space = full_space(2)
    (one,) = sample_lhs(space, 1, make_rng(0))
    encode(space, one)
    assert sample_lhs(space, 6, make_rng(3)) == sample_lhs(space, 6, make_rng(3))


def test_space_file_roundtrip_and_errors():
    text = """
layer_count: 2
activations: [siren, finer]
pe_allowed: false
kernel: {nu: 1.5, ard: full}
bounds:
  omega0: {low: 5, high: 50, scale: log}
"""
    space = parse_space(text, "s.yaml")
    assert space.layer_count == 2 and space.nu == 1.5 and not space.pe_allowed
    assert space.bounds["omega0"].low == 5.0
    assert parse_space(dump_space(space)) == space
    with pytest.raises(ConfigError, match=r"s.yaml:4: activations\[1\]"):
        parse_space("layer_count: 1\nactivations:\n  - siren\n  - relu\n", "s.yaml")
    with pytest.raises(ConfigError, match="bounds.omega0"):
        parse_space("layer_count: 1\nbounds:\n  omega0: {low: 5, high: 1}\n", "s.yaml")
    with pytest.raises(ConfigError, match="unknown field"):
        parse_space("layer_count: 1\nwidth: 3\n")


def test_configuration_file_errors_name_field(tmp_path):
    space = SearchSpace.uniform(2, ALL)
    path = tmp_path / "c.yaml"
    path.write_text("use_pe: false\nlayers:\n  - {activation: siren}\n  - activation: gauss\n"
                    "    omega0: 300\n")
    with pytest.raises(ConfigError) as err:
        load_configuration(path, space)
    assert err.value.field == "layers[1].omega0" and err.value.line == 5
    path.write_text("use_pe: true\npe_scale: 2e0\nlayers:\n  - {activation: siren, lr: 1e-3}\n"
                    "  - {activation: wire, siren_init: false}\n")
    c = load_configuration(path, space)
    assert c.layers[0].lr == 1e-3 and not c.layers[1].siren_init and c.pe_scale == 2.0


def test_configuration_dict_roundtrip():
    c = Configuration(True, 8.0, (LayerChoice(ActivationFamily.FINER, False, 30.0, 10.0, 1.0, 1.0, 1e-4),))
    assert Configuration.from_dict(c.to_dict()) == c

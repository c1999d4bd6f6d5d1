import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geobridge.nn import INFER, TRAIN, finite_difference, max_relative_error
from geobridge.posenc import LearnedPositionalEncoder, PosEncConfig, concat_features, fixed_encode, \
    learned_encode

EU_LAT = st.floats(34.0, 72.0)
EU_LON = st.floats(-25.0, 45.0)


def scalar_oracle(lat, lon, d, n=1e4, scale=1.0):
    """Element-by-element evaluation of the sin/cos formula with the math module."""
    out = []
    for deg in (lat, lon):
        block = [0.0] * d
        for i in range(d // 2):
            w = scale * deg * n ** (-2 * i / d)
            block[2 * i] = math.sin(w)
            block[2 * i + 1] = math.cos(w)
        out.extend(block)
    return out


def test_origin_alternates_zero_one():
    enc = fixed_encode(0.0, 0.0, PosEncConfig(dim=8))
    assert enc.tolist() == [0.0, 1.0] * 8


def test_lat90_first_pair():
    enc = fixed_encode(90.0, 0.0, PosEncConfig(dim=64))
    assert enc.shape == (128,)
    assert enc[0] == pytest.approx(0.8939966636005579, abs=1e-15)
    assert enc[1] == pytest.approx(-0.4480736161291701, abs=1e-15)


@pytest.mark.parametrize("d", [2, 4, 16, 64])
def test_matches_scalar_oracle(d):
    rng = np.random.default_rng(d)
    for lat, lon in zip(rng.uniform(-90, 90, 25), rng.uniform(-180, 180, 25)):
        got = fixed_encode(lat, lon, PosEncConfig(dim=d, coord_scale=0.7))
        assert np.max(np.abs(got - scalar_oracle(lat, lon, d, scale=0.7))) < 1e-12


def test_frequencies_strictly_decrease():
    cfg = PosEncConfig(dim=64)
    i = np.arange(cfg.dim // 2)
    arg = np.abs(37.5 * cfg.base ** (-2.0 * i / cfg.dim))
    assert np.all(np.diff(arg) < 0)


def test_batch_encoding_matches_scalar_calls():
    lat = np.array([10.0, -45.5, 80.0])
    lon = np.array([100.0, 0.5, -170.0])
    batch = fixed_encode(lat, lon)
    for k in range(3):
        assert np.array_equal(batch[k], fixed_encode(lat[k], lon[k]))


@pytest.mark.parametrize("lat,lon", [(91, 0), (0, -180.5), (float("nan"), 0)])
def test_rejects_invalid_coordinates(lat, lon):
    with pytest.raises(ValueError):
        fixed_encode(lat, lon)


def test_config_validation():
    with pytest.raises(ValueError):
        PosEncConfig(dim=3)
    with pytest.raises(ValueError):
        PosEncConfig(base=1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-90, 90), st.floats(-180, 180))
def test_range_and_pythagorean_identity(lat, lon):
    enc = fixed_encode(lat, lon, PosEncConfig(dim=16))
    assert np.all(np.abs(enc) <= 1)
    pairs = enc.reshape(-1, 2)
    assert np.all(np.abs((pairs ** 2).sum(axis=1) - 1) < 1e-12)


@settings(max_examples=50, deadline=None)
@given(EU_LAT, EU_LAT, EU_LON)
def test_latitude_block_isolation(lat1, lat2, lon):
    cfg = PosEncConfig(dim=16)
    a, b = fixed_encode(lat1, lon, cfg), fixed_encode(lat2, lon, cfg)
    assert np.array_equal(a[cfg.dim:], b[cfg.dim:])


def test_injective_on_eu_grid():
    # 0.01 degree spacing over a patch of the EU box, plus coarse full-extent grid
    lats = np.concatenate([45.0 + 0.01 * np.arange(30), np.linspace(34, 72, 30)])
    lons = np.concatenate([5.0 + 0.01 * np.arange(30), np.linspace(-25, 45, 30)])
    LA, LO = np.meshgrid(lats, lons, indexing="ij")
    enc = fixed_encode(LA.ravel(), LO.ravel(), PosEncConfig(dim=64))
    sq = (enc ** 2).sum(axis=1)
    dist2 = sq[:, None] + sq[None, :] - 2 * enc @ enc.T
    np.fill_diagonal(dist2, np.inf)
    # distinct coordinates (the two grids share none) must map to distinct vectors
    assert np.sqrt(max(dist2.min(), 0.0)) > 1e-9


def test_learned_encoder_output_range_and_purity():
    rng = np.random.default_rng(0)
    head = LearnedPositionalEncoder(16, 32, rng)
    enc = fixed_encode(rng.uniform(35, 70, 10), rng.uniform(-10, 40, 10), PosEncConfig(dim=8))
    p1 = learned_encode(enc, head, INFER)
    p2 = learned_encode(enc, head, INFER)
    assert np.array_equal(p1, p2)
    assert np.all((p1 > 0) & (p1 < 1))
    pt = learned_encode(enc, head, TRAIN, np.random.default_rng(1))
    assert np.all((pt > 0) & (pt < 1))


def test_zero_head_gives_half():
    head = LearnedPositionalEncoder(8, 16, rng=None)  # rng=None -> zero weights
    enc = fixed_encode(np.array([40.0, 50.0, 60.0]), np.array([1.0, 2.0, 3.0]), PosEncConfig(dim=4))
    assert np.all(learned_encode(enc, head, INFER) == 0.5)
    assert np.all(learned_encode(enc, head, TRAIN, np.random.default_rng(0)) == 0.5)


def test_width_mismatch():
    head = LearnedPositionalEncoder(8, 16, np.random.default_rng(0))
    with pytest.raises(ValueError):
        learned_encode(np.zeros((2, 6)), head)


def test_head_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    head = LearnedPositionalEncoder(8, 6, rng, dropout=0.3)
    enc = fixed_encode(rng.uniform(35, 70, 7), rng.uniform(-10, 40, 7), PosEncConfig(dim=4))
    proj = rng.normal(size=(7, 8))

    def f():
        return float((head.forward(enc, TRAIN, np.random.default_rng(3)) * proj).sum())

    f()
    for layer in head.layers().values():
        layer.zero_grad()
    head.backward(proj)
    analytic, params = {}, {}
    for name, layer in head.layers().items():
        for k in layer.params:
            analytic[f"{name}.{k}"] = layer.grads[k].copy()
            params[f"{name}.{k}"] = layer.params[k]
    assert max_relative_error(analytic, finite_difference(f, params)) < 1e-4


def test_concat_features():
    assert concat_features(np.array([1.0, 2.0]), np.array([0.5, 0.5])).tolist() == [1, 2, 0.5, 0.5]
    x = np.array([1.0, 2.0])
    assert np.array_equal(concat_features(x, np.zeros(0)), x)
    assert np.array_equal(concat_features(x, None), x)
    assert concat_features(np.zeros(109), np.zeros(128)).shape == (237,)

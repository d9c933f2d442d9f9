import json
import math

import numpy as np
import pytest

from compactstat.detrend import fit_polynomial
from compactstat.geodata import AnisotropyTransform
from compactstat.simfield import (
    MAX_POINTS, FieldSampler, FieldSpec, SimulationError, TestBedSpec, covariance_matrix,
    generate_testbed, replicate_rng, semivariogram_band, simulate_grf,
)
from compactstat.variogram import VariogramConfig, empirical_semivariogram
from compactstat.varmodel import SphericalParams, spherical_cov, spherical_semivariogram


def test_pure_nugget_variance():
    spec = FieldSpec(SphericalParams(4.0, 0.0, 1.0))
    draws = [simulate_grf([(0.0, 0.0)], spec, seed=s)[0] for s in range(10_000)]
    assert np.var(draws, ddof=1) == pytest.approx(4.0, rel=0.05)


def test_pair_correlation():
    params = SphericalParams(0.0, 3.0, 10.0)
    pts = np.array([[0.0, 0.0], [4.0, 0.0]])
    sampler = FieldSampler(pts, FieldSpec(params))
    r = np.random.default_rng(0)
    v = np.array([sampler.draw(r) for _ in range(10_000)])
    corr = np.corrcoef(v.T)[0, 1]
    assert abs(corr - spherical_cov(4.0, params) / 3.0) < 0.02


def test_anisotropic_covariance():
    params = SphericalParams(0.0, 1.0, 10.0)
    pts = np.array([[0.0, 0.0], [0.0, 1.0], [5.0, 0.0]])
    cov = covariance_matrix(pts, params, AnisotropyTransform(5.0))
    assert cov[0, 1] == pytest.approx(cov[0, 2])
    assert np.allclose(cov, cov.T) and np.all(np.diag(cov) >= 0)


def test_deterministic_and_trend():
    pts = np.random.default_rng(0).uniform(0, 10, (50, 2))
    spec = FieldSpec(SphericalParams(0.5, 2.0, 4.0), trend_coeffs=(10.0, 1.0, 0.0))
    a = simulate_grf(pts, spec, seed=3)
    b = simulate_grf(pts, spec, seed=3)
    assert a.tobytes() == b.tobytes()
    flat = simulate_grf(pts, FieldSpec(spec.params), seed=3)
    np.testing.assert_allclose(a - flat, 10.0 + pts[:, 0])


def test_guards():
    with pytest.raises(SimulationError):
        FieldSampler(np.zeros((MAX_POINTS + 1, 2)), FieldSpec(SphericalParams(1, 1, 1)))
    with pytest.raises(ValueError):
        FieldSpec(SphericalParams(1, 1, 1), trend_coeffs=(1.0, 2.0))


def test_jitter_recorded_for_coincident_points():
    pts = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    s = FieldSampler(pts, FieldSpec(SphericalParams(0.0, 1.0, 5.0)))
    cov = covariance_matrix(pts, SphericalParams(0.0, 1.0, 5.0))
    assert 0 < s.jitter <= 1e-10 * np.trace(cov) / 3 * 2**8


def _band_setup(seed=0, n=300):
    pts = np.random.default_rng(seed).uniform(0, 30, (n, 2))
    params = SphericalParams(1.0, 8.0, 10.0)
    cfg = VariogramConfig(max_lag=15.0, n_bins=10)
    return pts, params, cfg


def test_band_shape_and_nesting():
    pts, params, cfg = _band_setup()
    b95, b75 = semivariogram_band(pts, FieldSpec(params), cfg, n_reps=60, levels=(0.95, 0.75))
    assert b95.width[-1] > b95.width[0]
    assert np.all(b95.lower < b75.lower) and np.all(b75.upper < b95.upper)
    assert np.all(b95.lower <= b95.mean) and np.all(b95.mean <= b95.upper)


def test_band_covers_truth():
    pts, params, cfg = _band_setup(1, 400)
    (band,) = semivariogram_band(pts, FieldSpec(params), cfg, n_reps=200, levels=(0.95,), seed=2)
    truth = spherical_semivariogram(band.lags, params)
    inside = (band.lower <= truth) & (truth <= band.upper)
    assert inside.mean() >= 0.9


def test_band_reproducible():
    pts, params, cfg = _band_setup(n=100)
    a = semivariogram_band(pts, FieldSpec(params), cfg, n_reps=5, seed=4)
    b = semivariogram_band(pts, FieldSpec(params), cfg, n_reps=5, seed=4)
    assert a[0].upper.tobytes() == b[0].upper.tobytes()
    with pytest.raises(ValueError):
        semivariogram_band(pts, FieldSpec(params), cfg, n_reps=1)


def test_replicate_streams_independent():
    a = replicate_rng(1, 0).standard_normal(3)
    b = replicate_rng(1, 1).standard_normal(3)
    assert not np.allclose(a, b)


FIELD = FieldSpec(SphericalParams(0.5, 10.0, 8.0), AnisotropyTransform(5.0))


def test_testbed_geometry():
    bed = TestBedSpec(x_min=0, x_max=20, y_min=0, y_max=30, lane_width=1.0, spacing_along=0.5)
    ds_x, ds_y, truth = generate_testbed(bed, FieldSpec(SphericalParams(0, 1, 3)))
    assert ds_x.lane.max() == 30
    assert ds_y.lane.max() == 20
    first = ds_x.x[ds_x.lane == 1]
    second = ds_x.x[ds_x.lane == 2]
    assert first[0] < first[-1] and second[0] > second[-1]
    ylane = ds_y.y[ds_y.lane == 3]
    assert np.all(np.diff(ylane) > 0)
    assert truth.lane_errors.shape == (30,)


def test_testbed_noiseless_shared_locations():
    bed = TestBedSpec(x_min=0, x_max=10, y_min=0, y_max=10, lane_width=2.0, spacing_along=0.5)
    spec = FieldSpec(SphericalParams(0.2, 5.0, 4.0), trend_coeffs=(1.0, 2.0, -1.0),
                     trend_center=(5.0, 5.0), trend_scale=5.0)
    ds_x, ds_y, truth = generate_testbed(bed, spec)
    vx = {(round(x, 6), round(y, 6)): v for x, y, v in zip(ds_x.x, ds_x.y, ds_x.ks)}
    shared = 0
    for x, y, v in zip(ds_y.x, ds_y.y, ds_y.ks):
        key = (round(x, 6), round(y, 6))
        if key in vx:
            assert vx[key] == v
            shared += 1
    assert shared == 25
    np.testing.assert_allclose(ds_x.ks, truth.latent_x + truth.trend_x)
    json.loads(truth.to_json())


def test_testbed_deterministic():
    bed = TestBedSpec(x_min=0, x_max=10, y_min=0, y_max=10, spacing_along=0.5,
                      lane_error_sd=1.0, seed=5)
    a = generate_testbed(bed, FIELD)
    b = generate_testbed(bed, FIELD)
    assert a[0].ks.tobytes() == b[0].ks.tobytes() and a[1].ks.tobytes() == b[1].ks.tobytes()
    with pytest.raises(ValueError):
        TestBedSpec(x_min=1, x_max=1)


def test_lane_error_shift():
    """Lane biases lift the across-lane semivariogram by their variance."""
    e = 1.5
    kw = dict(x_min=0, x_max=12, y_min=0, y_max=24, lane_width=1.0, spacing_along=0.5)
    field = FieldSpec(SphericalParams(0.3, 4.0, 6.0), AnisotropyTransform(2.0), noise_sd_x=0.5)
    cfg_y = VariogramConfig(max_lag=8.0, n_bins=8, direction="y", angle_tol=1.0)
    cfg_x = VariogramConfig(max_lag=6.0, n_bins=6, direction="x", angle_tol=1.0)
    dy, dx = [], []
    for seed in range(10):
        out = {}
        for sd in (0.0, e):
            ds_x, _, _ = generate_testbed(TestBedSpec(**kw, lane_error_sd=sd, seed=seed), field)
            _, res = fit_polynomial(ds_x, 1)
            out[sd] = (empirical_semivariogram(ds_x.coords, res.values, cfg_y).gamma,
                       empirical_semivariogram(ds_x.coords, res.values, cfg_x).gamma)
        dy.append(out[e][0] - out[0.0][0])
        dx.append(out[e][1] - out[0.0][1])
    dy, dx = np.array(dy), np.array(dx)
    assert np.all(np.abs(dy.mean(0) - e * e) < 4 * dy.std(0, ddof=1) / math.sqrt(len(dy)))
    assert np.all(np.abs(dx.mean(0)) < 4 * dx.std(0, ddof=1) / math.sqrt(len(dx)) + 1e-12)

from dataclasses import replace

import numpy as np
import pytest

from compactstat.backfit import (
    BackfitSpec, directional_fit, estimate_alpha, run_backfit, update_sigma2,
)
from compactstat.geodata import (
    DEFAULT_LATTICE, AnisotropyTransform, DataError, Dataset, Lattice, MappingOperator,
)
from compactstat.simfield import FieldSpec, TestBedSpec, generate_testbed
from compactstat.varmodel import SphericalParams

from oracles import gauss_solve, spherical_cov_ref

BED = dict(x_min=25, x_max=37, y_min=0, y_max=12, lane_width=1.5, spacing_along=0.25)
LAT = Lattice(30, 30, 24.5, 37.5, -0.5, 12.5)
FIELD = FieldSpec(SphericalParams(0.3, 8.0, 5.0), AnisotropyTransform(3.0),
                  noise_sd_x=0.8, noise_sd_y=0.8)


def small_spec(**kw):
    base = dict(c=1.0, rho=3.0, lattice=LAT, poly_degree=3, angle_tol=5.0,
                max_lag_x=6.0, max_lag_y=4.0, n_bins=12, subsample_size=2000)
    base.update(kw)
    return BackfitSpec(**base)


def test_update_sigma2():
    assert update_sigma2([0.0, 0.0, 0.0]) == 0.0
    assert update_sigma2([-1.0, 1.0]) == 2.0
    with pytest.raises(ValueError):
        update_sigma2([1.0])


def test_alpha_noiseless_interpolation(rng):
    lat = Lattice(5, 4, 0.0, 4.0, 0.0, 3.0)
    m = MappingOperator(np.arange(lat.size), lat.size, lat)
    r = rng.normal(size=lat.size)
    alpha = estimate_alpha(r, m, lat, SphericalParams(0.0, 2.0, 2.5), 1.0, 0.0)
    np.testing.assert_allclose(alpha, r, atol=1e-6)


def test_alpha_shrinks_to_zero(rng):
    lat = Lattice(4, 4, 0.0, 3.0, 0.0, 3.0)
    m = MappingOperator(rng.integers(0, lat.size, 30), lat.size, lat)
    r = rng.normal(size=30)
    p = SphericalParams(0.0, 1.0, 2.0)
    assert np.all(estimate_alpha(r, m, lat, p, 2.0, np.inf) == 0)
    assert np.abs(estimate_alpha(r, m, lat, p, 2.0, 1e12)).max() < 1e-9


def test_alpha_matches_hand_kriging():
    lat = Lattice(3, 2, 0.0, 2.0, 0.0, 1.0)
    # observations on nodes 0 and 2 only (bottom row, ends)
    m = MappingOperator([0, 0, 2], lat.size, lat)
    r = [1.0, 3.0, -1.0]
    p = SphericalParams(0.0, 4.0, 3.0)
    rho, s2 = 1.5, 0.5
    alpha = estimate_alpha(r, m, lat, p, rho, s2)
    nodes = lat.node_coords()
    nodes[:, 1] *= rho

    def cov(a, b):
        return spherical_cov_ref(float(np.hypot(*(nodes[a] - nodes[b]))), 4.0, 3.0)

    K = [[cov(0, 0) + s2 / 2, cov(0, 2)], [cov(2, 0), cov(2, 2) + s2 / 1]]
    w = gauss_solve(K, [2.0, -1.0])
    for node in range(lat.size):
        want = cov(node, 0) * w[0] + cov(node, 2) * w[1]
        assert alpha[node] == pytest.approx(want, rel=1e-10, abs=1e-12)


def test_alpha_observation_order_invariant(rng):
    lat = Lattice(6, 5, 0.0, 5.0, 0.0, 4.0)
    assign = rng.integers(0, lat.size, 40)
    r = rng.normal(size=40)
    p = SphericalParams(0.0, 1.0, 3.0)
    a = estimate_alpha(r, MappingOperator(assign, lat.size, lat), lat, p, 2.0, 0.3)
    perm = rng.permutation(40)
    b = estimate_alpha(r[perm], MappingOperator(assign[perm], lat.size, lat), lat, p, 2.0, 0.3)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_alpha_transpose_equivariant(rng):
    lat = Lattice(6, 5, 0.0, 5.0, 0.0, 4.0)
    lat_t = Lattice(5, 6, 0.0, 4.0, 0.0, 5.0)
    assign = rng.choice(lat.size, 15, replace=False)
    i, j = assign % 6, assign // 6
    r = rng.normal(size=15)
    p = SphericalParams(0.0, 1.0, 3.0)
    a = estimate_alpha(r, MappingOperator(assign, 30, lat), lat, p, 1.0, 0.2)
    b = estimate_alpha(r, MappingOperator(i * 5 + j, 30, lat_t), lat_t, p, 1.0, 0.2)
    np.testing.assert_allclose(a.reshape(5, 6), b.reshape(6, 5).T, rtol=1e-9, atol=1e-12)


@pytest.fixture(scope="module")
def testbed():
    return generate_testbed(TestBedSpec(**BED, lane_error_sd=1.0, seed=3), FIELD)


def test_c0_matches_standalone(testbed):
    ds_x, ds_y, _ = testbed
    spec = small_spec(c=0.0)
    res = run_backfit(ds_x, ds_y, spec)
    fx = directional_fit(ds_x, "x", spec)
    fy = directional_fit(ds_y, "y", spec)
    assert res.converged
    for got, want in [(res.sigma2_x, fx.sigma2), (res.theta_x.psill, fx.theta.psill),
                      (res.theta_x.range, fx.theta.range), (res.sigma2_y, fy.sigma2),
                      (res.theta_y.psill, fy.theta.psill), (res.theta_y.range, fy.theta.range)]:
        assert got == pytest.approx(want, rel=1e-6)


def test_result_shapes_and_monotone_rss(testbed):
    ds_x, ds_y, _ = testbed
    res = run_backfit(ds_x, ds_y, small_spec(tol=1e-6, max_outer_iters=6))
    assert res.alpha_x.shape == (LAT.size,) and res.alpha_y.shape == (LAT.size,)
    assert res.sigma2_x >= 0 and res.sigma2_y >= 0
    h = np.array(res.rss_history)
    assert np.all(np.diff(h) <= 1e-8 * h[:-1])
    d = res.to_dict()
    assert set(["beta_x", "theta_x", "sigma2_y", "c", "rho", "lattice", "converged",
                "n_outer_iters"]) <= set(d)
    assert d["theta_y"]["range_m"] == pytest.approx(res.theta_y.range / 3.0)


def test_deterministic(testbed):
    ds_x, ds_y, _ = testbed
    a = run_backfit(ds_x, ds_y, small_spec())
    b = run_backfit(ds_x, ds_y, small_spec(workers=4))
    assert a.to_json() != "" and a.alpha_y.tobytes() == b.alpha_y.tobytes()
    assert a.theta_y == b.theta_y


def _swap(ds):
    return Dataset(ds.y, ds.x, ds.ks, ds.lane, ds.driving_direction)


def test_isotropic_axis_swap_symmetry():
    field = FieldSpec(SphericalParams(0.3, 6.0, 4.0), noise_sd_x=0.5, noise_sd_y=0.5)
    ds_x, ds_y, _ = generate_testbed(TestBedSpec(**BED, seed=8), field)
    spec = small_spec(rho=1.0, max_lag_y=6.0, lattice=Lattice(20, 20, 24.5, 37.5, -0.5, 12.5))
    swapped = small_spec(rho=1.0, max_lag_y=6.0, axes=("y", "x"),
                         lattice=Lattice(20, 20, -0.5, 12.5, 24.5, 37.5))
    a = run_backfit(ds_x, ds_y, spec)
    b = run_backfit(_swap(ds_x), _swap(ds_y), swapped)
    for p, q in [(a.theta_x, b.theta_x), (a.theta_y, b.theta_y)]:
        assert q.psill == pytest.approx(p.psill, rel=1e-6)
        assert q.range == pytest.approx(p.range, rel=1e-6)
    assert b.sigma2_x == pytest.approx(a.sigma2_x, rel=1e-6)
    np.testing.assert_allclose(b.alpha_x.reshape(20, 20).T, a.alpha_x.reshape(20, 20),
                               rtol=1e-5, atol=1e-6)


def test_lattice_must_cover(testbed):
    ds_x, ds_y, _ = testbed
    with pytest.raises(DataError, match="outside"):
        run_backfit(ds_x, ds_y, small_spec(lattice=Lattice(10, 10, 26, 36, 0, 12)))


def test_update_sigma2_recovers_injected_noise():
    bed = TestBedSpec(x_min=25, x_max=45, y_min=0, y_max=8, lane_width=0.5, spacing_along=0.2)
    field = FieldSpec(SphericalParams(0.0, 0.0, 1.0), noise_sd_x=1.5,
                      trend_coeffs=(4.0, 1.0, -2.0), trend_center=(35.0, 4.0), trend_scale=10.0)
    for seed in range(10):
        ds_x, _, _ = generate_testbed(replace(bed, seed=seed), field)
        fx = directional_fit(ds_x, "x", small_spec(lattice=DEFAULT_LATTICE))
        assert update_sigma2(fx.residuals) == pytest.approx(1.5**2, rel=0.10)


def test_alpha_y_absorbs_unshared_field():
    """Pure-noise x pass, independent spatial field in the y pass."""
    y_field = FieldSpec(SphericalParams(0.5, 8.0, 4.0), AnisotropyTransform(3.0),
                        noise_sd_y=0.8)
    noise_only = FieldSpec(SphericalParams(0.0, 0.0, 1.0), noise_sd_x=0.8)
    truth = 0.5 + 8.0 + 0.8**2
    sills = []
    for seed in range(10):
        ds_x, _, _ = generate_testbed(TestBedSpec(**BED, seed=1000 + seed), noise_only)
        _, ds_y, _ = generate_testbed(TestBedSpec(**BED, seed=seed), y_field)
        res = run_backfit(ds_x, ds_y, small_spec(seed=seed))
        sills.append(res.theta_y.psill + res.sigma2_y)
    assert np.mean(sills) == pytest.approx(truth, rel=0.25)


def test_spec_validation():
    with pytest.raises(ValueError):
        BackfitSpec(rho=0.0)
    with pytest.raises(ValueError):
        BackfitSpec(c=float("nan"))
    with pytest.raises(ValueError):
        BackfitSpec(axes=("x", "omni"))

"""Sequential spatial backfitting for two driving-direction datasets.

Model, with ``H`` the nearest-node incidence operators of each dataset::

    z_x = H_x X_x beta_x + H_x alpha_x + eps_x
    z_y = H_y X_y beta_y + c H_y alpha_x + H_y alpha_y + eps_y

``alpha_x`` and ``alpha_y`` live on a common lattice. Each outer iteration
re-estimates one component while holding the others fixed:

1. residuals of the x data after its polynomial trend give an
   x-directional semivariogram; its spherical fit supplies ``sigma2_x``
   (the nugget) and ``theta_x`` (partial sill, range);
2. ``alpha_x`` is the kriging predictor of those residuals on the lattice;
3. the y data, minus its trend and ``c * H_y alpha_x``, give a
   y-directional semivariogram, ``theta_y``, ``sigma2_y`` and ``alpha_y``;
4. both trends are refitted by OLS on the data minus the lattice terms.

Lattice estimates are made orthogonal to their own dataset's trend columns
so trend and lattice process stay identifiable; without it the trend refit
would drift and ``c = 0`` would no longer reproduce the one-dataset analysis.
All covariance distances, including the semivariogram lags, are taken after
the anisotropy map ``(x, y) -> (x, rho * y)``; ranges in ``theta_y`` are
therefore in stretched units and :attr:`BackfitResult.range_y_m` converts
back to metres.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.spatial import cKDTree

from .detrend import _ols_qr, polynomial_design
from .geodata import (
    DEFAULT_LATTICE, AnisotropyTransform, Dataset, Lattice, MappingOperator,
    apply_anisotropy, build_mapping, center_scale,
)
from .simfield import _cholesky_with_jitter
from .variogram import (
    Direction, EmpiricalSemivariogram, VariogramConfig, default_max_lag,
    empirical_semivariogram, subsample,
)
from .varmodel import FitResult, SphericalParams, fit_cressie_wls, spherical_cov

__all__ = [
    "BackfitSpec",
    "BackfitResult",
    "DirectionalFit",
    "directional_fit",
    "estimate_alpha",
    "update_sigma2",
    "run_backfit",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BackfitSpec:
    c: float = 1.0
    rho: float = 5.0
    lattice: Lattice = DEFAULT_LATTICE
    poly_degree: int = 5
    max_outer_iters: int = 50
    tol: float = 1e-3
    n_bins: int = 20
    angle_tol: float = 22.5
    max_lag_x: float | None = None
    max_lag_y: float | None = None
    subsample_size: int = 4500
    seed: int = 0
    workers: int = 1
    axes: tuple[str, str] = ("x", "y")

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(Direction(a) for a in self.axes))
        if Direction.OMNI in self.axes or len(self.axes) != 2:
            raise ValueError("axes must name one directional axis per dataset")
        if not math.isfinite(self.c):
            raise ValueError("c must be finite")
        AnisotropyTransform(self.rho)
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["lattice"] = self.lattice.to_dict()
        d["axes"] = [a.value for a in self.axes]
        return d


@dataclass(frozen=True, eq=False)
class DirectionalFit:
    """Trend residuals, their directional semivariogram and its spherical fit."""

    beta: np.ndarray
    residuals: np.ndarray
    semivariogram: EmpiricalSemivariogram
    fit: FitResult

    @property
    def sigma2(self) -> float:
        return self.fit.params.nugget

    @property
    def theta(self) -> SphericalParams:
        return self.fit.params


def update_sigma2(residuals_after_alpha) -> float:
    """Sample variance (``n - 1`` denominator) of the remaining residuals."""
    r = np.asarray(residuals_after_alpha, dtype=float)
    if r.size < 2:
        raise ValueError("need at least 2 residuals")
    return float(np.var(r, ddof=1))


def _axis_scale(direction: Direction, rho: float) -> float:
    return rho if direction == Direction.Y else 1.0


def _variogram_for(ds: Dataset, values, direction: Direction, spec: BackfitSpec):
    n = len(ds)
    size = min(n, spec.subsample_size)
    _, idx = subsample(np.arange(n), size, spec.seed)
    raw = ds.coords
    pts = apply_anisotropy(raw[idx], spec.rho)
    max_lag = spec.max_lag_x if direction == spec.axes[0] else spec.max_lag_y
    if max_lag is None:
        max_lag = default_max_lag(raw)
    cfg = VariogramConfig(max_lag * _axis_scale(direction, spec.rho), spec.n_bins, direction,
                          spec.angle_tol, size, spec.seed)
    return empirical_semivariogram(pts, np.asarray(values)[idx], cfg, workers=spec.workers)


def _design(ds: Dataset, degree: int):
    scaled, const = center_scale(ds)
    return polynomial_design(scaled, degree), const


def directional_fit(ds: Dataset, direction, spec: BackfitSpec = BackfitSpec(),
                    offset=None) -> DirectionalFit:
    """The one-dataset analysis: polynomial detrend, directional semivariogram, Cressie fit.

    ``offset`` (observation-level values) is subtracted before detrending.
    Subsampling, binning and the anisotropy map follow ``spec`` exactly as
    :func:`run_backfit` does, so with ``c = 0`` the two agree.
    """
    direction = Direction(direction)
    X, _ = _design(ds, spec.poly_degree)
    z = ds.ks if offset is None else ds.ks - offset
    beta = _ols_qr(X, z)
    r = z - X @ beta
    emp = _variogram_for(ds, r, direction, spec)
    return DirectionalFit(beta, r, emp, fit_cressie_wls(emp))


def estimate_alpha(residuals, mapping: MappingOperator, lat: Lattice, params: SphericalParams,
                   rho: float, sigma2: float) -> np.ndarray:
    """Kriging predictor of the lattice process from observation residuals.

    Observations are averaged per node; node means have error variance
    ``sigma2 / count``. The spherical covariance (``params.psill``,
    ``params.range``; the nugget is not used) is evaluated on the
    ``rho``-stretched node coordinates, and nodes without data are predicted
    from the informed ones.

    Returns
    -------
    ndarray of length ``lat.nx * lat.ny``
    """
    if sigma2 < 0:
        raise ValueError("sigma2 must be >= 0")
    means, counts = mapping.node_means(residuals)
    alpha = np.zeros(lat.size)
    obs = np.flatnonzero(counts > 0)
    if math.isinf(sigma2) or params.psill == 0 or obs.size == 0:
        return alpha
    nodes = apply_anisotropy(lat.node_coords(), rho)
    tree_o = cKDTree(nodes[obs])
    # Spherical covariance vanishes beyond the range, so only close node
    # pairs contribute.
    d_oo = tree_o.sparse_distance_matrix(tree_o, params.range, output_type="coo_matrix")
    K = np.zeros((obs.size, obs.size))
    K[d_oo.row, d_oo.col] = spherical_cov(d_oo.data, params)
    K[np.diag_indices_from(K)] = params.psill + sigma2 / counts[obs]
    L, jitter = _cholesky_with_jitter(K)
    if jitter:
        log.info("kriging system needed jitter %.3g", jitter)
    w = scipy.linalg.cho_solve((L, True), means[obs], check_finite=False)
    tree_a = cKDTree(nodes)
    d_ao = tree_a.sparse_distance_matrix(tree_o, params.range, output_type="coo_matrix")
    np.add.at(alpha, d_ao.row, spherical_cov(d_ao.data, params) * w[d_ao.col])
    return alpha


def _trend_free(alpha, X, mapping, L_nodes):
    """Remove from ``alpha`` the lattice polynomial that explains ``H alpha`` on ``X``."""
    Ha = mapping.apply(alpha)
    HL = L_nodes[mapping.assignments]
    A = X.T @ HL
    g = np.linalg.solve(A, X.T @ Ha)
    return alpha - L_nodes @ g


@dataclass(frozen=True, eq=False)
class BackfitResult:
    beta_x: np.ndarray
    beta_y: np.ndarray
    alpha_x: np.ndarray
    alpha_y: np.ndarray
    theta_x: SphericalParams
    theta_y: SphericalParams
    sigma2_x: float
    sigma2_y: float
    n_outer_iters: int
    converged: bool
    spec: BackfitSpec
    semivariograms: dict = field(default_factory=dict)
    rss_history: list = field(default_factory=list)
    scaling: dict = field(default_factory=dict)

    @property
    def range_x_m(self) -> float:
        """Range of ``alpha_x`` in metres along its semivariogram axis."""
        return self.theta_x.range / _axis_scale(self.spec.axes[0], self.spec.rho)

    @property
    def range_y_m(self) -> float:
        """Range of ``alpha_y`` in metres along its semivariogram axis."""
        return self.theta_y.range / _axis_scale(self.spec.axes[1], self.spec.rho)

    def to_dict(self):
        return {
            "beta_x": [float(b) for b in self.beta_x],
            "beta_y": [float(b) for b in self.beta_y],
            "theta_x": {"psill": self.theta_x.psill, "range": self.theta_x.range,
                        "range_m": self.range_x_m},
            "theta_y": {"psill": self.theta_y.psill, "range": self.theta_y.range,
                        "range_m": self.range_y_m},
            "sigma2_x": self.sigma2_x,
            "sigma2_y": self.sigma2_y,
            "c": self.spec.c,
            "rho": self.spec.rho,
            "lattice": self.spec.lattice.to_dict(),
            "converged": self.converged,
            "n_outer_iters": self.n_outer_iters,
            "beta_update": "ols",
            "rss_history": [float(v) for v in self.rss_history],
            "scaling": self.scaling,
            "spec": self.spec.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def write_alpha_csv(self, path) -> None:
        nodes = self.spec.lattice.node_coords()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node_x", "node_y", "alpha_x", "alpha_y"])
            for (nx_, ny_), ax, ay in zip(nodes, self.alpha_x, self.alpha_y):
                w.writerow([repr(float(nx_)), repr(float(ny_)), repr(float(ax)), repr(float(ay))])


def _theta_vector(th_x, th_y, s2x, s2y):
    return np.array([th_x.psill, th_x.range, th_y.psill, th_y.range, s2x, s2y])


def run_backfit(ds_x: Dataset, ds_y: Dataset, spec: BackfitSpec = BackfitSpec()) -> BackfitResult:
    """Estimate both lattice processes, trends, covariances and noise variances.

    Iterates until the relative change of ``(theta_x, theta_y, sigma2_x,
    sigma2_y)`` drops below ``spec.tol`` or ``spec.max_outer_iters`` is
    reached; in the latter case the last iterate is returned with
    ``converged=False``.

    Raises
    ------
    DataError
        If an observation falls outside the lattice.
    DetrendError
        If a trend design is rank deficient.
    """
    lat = spec.lattice
    H_x = build_mapping(ds_x, lat)
    H_y = build_mapping(ds_y, lat)
    X_x, const_x = _design(ds_x, spec.poly_degree)
    X_y, const_y = _design(ds_y, spec.poly_degree)
    nodes = lat.node_coords()
    Lx = polynomial_design(const_x.forward(nodes), spec.poly_degree)
    Ly = polynomial_design(const_y.forward(nodes), spec.poly_degree)
    z_x, z_y = ds_x.ks, ds_y.ks
    c = spec.c

    beta_x = _ols_qr(X_x, z_x)
    beta_y = _ols_qr(X_y, z_y)
    alpha_x = np.zeros(lat.size)
    alpha_y = np.zeros(lat.size)
    def _rss(bx, by, ax, ay):
        return float(np.sum((z_x - X_x @ bx - H_x.apply(ax)) ** 2)
                     + np.sum((z_y - X_y @ by - c * H_y.apply(ax) - H_y.apply(ay)) ** 2))

    prev = None
    converged = False
    rss_history = []
    emp_x = emp_y = None
    for it in range(1, spec.max_outer_iters + 1):
        r_x = z_x - X_x @ beta_x
        emp_x = _variogram_for(ds_x, r_x, spec.axes[0], spec)
        fit_x = fit_cressie_wls(emp_x)
        sigma2_x, theta_x = fit_x.params.nugget, fit_x.params
        new_ax = estimate_alpha(r_x, H_x, lat, theta_x, spec.rho, sigma2_x)
        new_ax = _trend_free(new_ax, X_x, H_x, Lx)

        shared = c * H_y.apply(new_ax)
        r_y = z_y - X_y @ beta_y - shared
        emp_y = _variogram_for(ds_y, r_y, spec.axes[1], spec)
        fit_y = fit_cressie_wls(emp_y)
        sigma2_y, theta_y = fit_y.params.nugget, fit_y.params
        new_ay = estimate_alpha(r_y, H_y, lat, theta_y, spec.rho, sigma2_y)
        new_ay = _trend_free(new_ay, X_y, H_y, Ly)

        new_bx = _ols_qr(X_x, z_x - H_x.apply(new_ax))
        new_by = _ols_qr(X_y, z_y - shared - H_y.apply(new_ay))
        rss = _rss(new_bx, new_by, new_ax, new_ay)
        # Kriging is not a projection, so a covariance update can raise the
        # working objective slightly; such steps are not taken.
        if not rss_history or rss <= rss_history[-1]:
            alpha_x, alpha_y, beta_x, beta_y = new_ax, new_ay, new_bx, new_by
        else:
            log.debug("outer iteration %d: rejected lattice step (rss %.12g > %.12g)",
                      it, rss, rss_history[-1])
            rss = rss_history[-1]
        rss_history.append(float(rss))

        cur = _theta_vector(theta_x, theta_y, sigma2_x, sigma2_y)
        if prev is not None:
            change = np.max(np.abs(cur - prev) / np.maximum(np.abs(prev), 1e-12))
            log.debug("outer iteration %d: relative change %.3g", it, change)
            if change < spec.tol:
                converged = True
                break
        prev = cur

    theta_x = SphericalParams(0.0, theta_x.psill, theta_x.range)
    theta_y = SphericalParams(0.0, theta_y.psill, theta_y.range)
    return BackfitResult(
        beta_x, beta_y, alpha_x, alpha_y, theta_x, theta_y, float(sigma2_x), float(sigma2_y),
        it, converged, spec,
        semivariograms={"x": emp_x, "y": emp_y},
        rss_history=rss_history,
        scaling={"x": const_x.to_dict(), "y": const_y.to_dict()},
    )

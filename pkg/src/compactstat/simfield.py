"""Gaussian random fields, semivariogram confidence bands and a synthetic roller test bed.

Fields are drawn exactly through a Cholesky factor of the dense covariance
matrix, so the number of locations per draw is capped at
:data:`MAX_POINTS`.

The test bed mimics a compaction site driven twice: snaking lanes in the
x-direction, then bottom-to-top lanes in the y-direction. Both passes observe
one latent field. Each x-driving lane carries its own constant bias, which
makes the bias a function of y alone and lifts the y-directional
semivariogram of the x-driving data by the bias variance.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist
from scipy.stats import norm

from .detrend import polynomial_design
from .geodata import AnisotropyTransform, Dataset, DrivingDirection, apply_anisotropy
from .variogram import VariogramConfig, default_max_lag, empirical_semivariogram
from .varmodel import SphericalParams, spherical_cov

__all__ = [
    "MAX_POINTS",
    "SimulationError",
    "FieldSpec",
    "TestBedSpec",
    "ConfidenceBand",
    "GroundTruth",
    "covariance_matrix",
    "FieldSampler",
    "simulate_grf",
    "semivariogram_band",
    "generate_testbed",
    "replicate_rng",
]

log = logging.getLogger(__name__)

MAX_POINTS = 5000
_JITTER_REL = 1e-10
_JITTER_DOUBLINGS = 8


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class FieldSpec:
    """Distribution of a simulated field.

    The optional trend is a polynomial in graded lexicographic order (see
    :func:`~compactstat.detrend.polynomial_design`) evaluated at
    ``(s - trend_center) / trend_scale``.
    """

    params: SphericalParams
    anisotropy: AnisotropyTransform = AnisotropyTransform(1.0)
    trend_coeffs: tuple[float, ...] | None = None
    trend_center: tuple[float, float] = (0.0, 0.0)
    trend_scale: float = 1.0
    noise_sd_x: float = 0.0
    noise_sd_y: float = 0.0

    def __post_init__(self):
        if self.noise_sd_x < 0 or self.noise_sd_y < 0:
            raise ValueError("noise standard deviations must be >= 0")
        if not self.trend_scale > 0:
            raise ValueError("trend_scale must be positive")
        if self.trend_coeffs is not None:
            object.__setattr__(self, "trend_coeffs", tuple(float(c) for c in self.trend_coeffs))
            self.trend_degree  # validates length

    @property
    def trend_degree(self) -> int | None:
        if self.trend_coeffs is None:
            return None
        m = len(self.trend_coeffs)
        d = (math.isqrt(8 * m + 1) - 3) // 2
        if (d + 1) * (d + 2) // 2 != m or d < 1:
            raise ValueError(f"{m} trend coefficients do not form a full polynomial")
        return d

    def trend(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.trend_coeffs is None:
            return np.zeros(pts.shape[0])
        u = (pts - np.asarray(self.trend_center)) / self.trend_scale
        return polynomial_design(u, self.trend_degree) @ np.asarray(self.trend_coeffs)

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "rho": self.anisotropy.rho,
            "trend_coeffs": None if self.trend_coeffs is None else list(self.trend_coeffs),
            "trend_center": list(self.trend_center),
            "trend_scale": self.trend_scale,
            "noise_sd_x": self.noise_sd_x,
            "noise_sd_y": self.noise_sd_y,
        }


def replicate_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent generator for sub-stream ``stream`` of ``seed``."""
    return np.random.default_rng([int(seed), int(stream)])


def covariance_matrix(points, params: SphericalParams, anisotropy=AnisotropyTransform(1.0)):
    """Dense covariance with spherical part on anisotropy-transformed distances plus nugget on the diagonal."""
    pts = apply_anisotropy(points, anisotropy)
    d = cdist(pts, pts)
    cov = spherical_cov(d, params)
    cov[np.diag_indices_from(cov)] += params.nugget
    return cov


def _cholesky_with_jitter(cov):
    """Lower Cholesky factor; returns ``(L, jitter_added)``.

    Tries the bare matrix first, then adds ``1e-10 * trace / n`` to the
    diagonal, doubling up to 8 times.
    """
    n = cov.shape[0]
    base = _JITTER_REL * np.trace(cov) / n
    jitter = 0.0
    for attempt in range(_JITTER_DOUBLINGS + 2):
        try:
            a = cov if jitter == 0 else cov + jitter * np.eye(n)
            return scipy.linalg.cholesky(a, lower=True, check_finite=False), jitter
        except np.linalg.LinAlgError:
            jitter = base if jitter == 0 else 2 * jitter
            if attempt <= _JITTER_DOUBLINGS:
                log.info("covariance not positive definite; adding jitter %.3g", jitter)
    raise SimulationError(f"Cholesky factorization failed after jitter up to {jitter / 2:.3g}")


class FieldSampler:
    """Factor the covariance once and draw any number of realizations.

    Parameters
    ----------
    points : array_like (n, 2)
    spec : FieldSpec
        Only ``params``, ``anisotropy`` and the trend are used; sensor noise
        belongs to the observation model, not the field.
    """

    def __init__(self, points, spec: FieldSpec):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        n = self.points.shape[0]
        if not np.all(np.isfinite(self.points)):
            raise SimulationError("points must be finite")
        if n > MAX_POINTS:
            raise SimulationError(f"{n} points exceed the dense simulation limit of {MAX_POINTS}")
        self.spec = spec
        if spec.params.psill == 0:
            self.factor, self.jitter = None, 0.0
        else:
            cov = covariance_matrix(self.points, spec.params, spec.anisotropy)
            self.factor, self.jitter = _cholesky_with_jitter(cov)
        self.mean = spec.trend(self.points)

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal(self.points.shape[0])
        if self.factor is None:
            return self.mean + math.sqrt(self.spec.params.nugget) * z
        return self.mean + self.factor @ z


def simulate_grf(points, spec: FieldSpec, seed: int = 0) -> np.ndarray:
    """One realization of the Gaussian field at ``points``; deterministic in ``seed``."""
    return FieldSampler(points, spec).draw(np.random.default_rng(seed))


@dataclass(frozen=True, eq=False)
class ConfidenceBand:
    lags: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    n_replicates: int

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def rows(self):
        for h, m, lo, hi in zip(self.lags, self.mean, self.lower, self.upper):
            yield float(h), float(m), float(lo), float(hi), self.level


def semivariogram_band(points, spec: FieldSpec, cfg: VariogramConfig | None = None,
                       n_reps: int = 200, levels=(0.95, 0.75), seed: int = 0):
    """Pointwise normal-theory bands ``mean +/- z * sd`` of simulated semivariograms.

    Replicate ``i`` uses the generator ``replicate_rng(seed, i)``, so the
    result does not depend on execution order. Bins that are empty in any
    replicate are dropped with a warning.
    """
    if n_reps < 2:
        raise ValueError("n_reps must be >= 2")
    for lv in levels:
        if not 0 < lv < 1:
            raise ValueError(f"confidence level must lie in (0, 1), got {lv}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    cfg = cfg or VariogramConfig()
    if cfg.max_lag is None:
        cfg = VariogramConfig(default_max_lag(pts), cfg.n_bins, cfg.direction, cfg.angle_tol,
                              cfg.subsample_size, cfg.seed)
    sampler = FieldSampler(pts, spec)
    gammas = []
    for i in range(n_reps):
        vals = sampler.draw(replicate_rng(seed, i))
        emp = empirical_semivariogram(pts, vals, cfg)
        gammas.append(emp.gamma)
    lags = emp.lags
    g = np.vstack(gammas)
    ok = ~np.any(np.isnan(g), axis=0)
    if not ok.all():
        warnings.warn(f"dropping {int((~ok).sum())} bins that are empty in some replicate")
    g = g[:, ok]
    mean = g.mean(axis=0)
    sd = g.std(axis=0, ddof=1)
    bands = []
    for lv in levels:
        z = norm.ppf(0.5 + lv / 2)
        bands.append(ConfidenceBand(lags[ok], mean, mean - z * sd, mean + z * sd, float(lv), n_reps))
    return bands


@dataclass(frozen=True)
class TestBedSpec:
    """Geometry of the synthetic compaction site.

    ``lane_error_sd`` is the standard deviation of the constant bias added to
    every observation of one x-driving lane.
    """

    __test__ = False  # not a pytest class

    x_min: float = 25.0
    x_max: float = 45.0
    y_min: float = 0.0
    y_max: float = 20.0
    lane_width: float = 2.0
    spacing_along: float = 0.1
    lane_error_sd: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("degenerate site bounds")
        if not (self.lane_width > 0 and self.spacing_along > 0):
            raise ValueError("lane_width and spacing_along must be positive")
        if self.lane_width > min(self.x_max - self.x_min, self.y_max - self.y_min):
            raise ValueError("lane_width exceeds the site")
        if self.lane_error_sd < 0:
            raise ValueError("lane_error_sd must be >= 0")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True, eq=False)
class GroundTruth:
    testbed: TestBedSpec
    field: FieldSpec
    latent_x: np.ndarray
    latent_y: np.ndarray
    trend_x: np.ndarray
    trend_y: np.ndarray
    lane_errors: np.ndarray
    jitter: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "seed": self.testbed.seed,
            "testbed": self.testbed.to_dict(),
            "field": self.field.to_dict(),
            "lane_errors": [float(e) for e in self.lane_errors],
            "jitter": self.jitter,
            "latent_x": [float(v) for v in self.latent_x],
            "latent_y": [float(v) for v in self.latent_y],
            "trend_x": [float(v) for v in self.trend_x],
            "trend_y": [float(v) for v in self.trend_y],
        }, indent=1)


def _n_steps(extent, step):
    return int(math.floor(extent / step + 1e-9))


def _lane_layout(spec: TestBedSpec):
    along_x = spec.x_min + spec.spacing_along * np.arange(_n_steps(spec.x_max - spec.x_min, spec.spacing_along) + 1)
    along_y = spec.y_min + spec.spacing_along * np.arange(_n_steps(spec.y_max - spec.y_min, spec.spacing_along) + 1)
    n_xl = max(1, int(round((spec.y_max - spec.y_min) / spec.lane_width)))
    n_yl = max(1, int(round((spec.x_max - spec.x_min) / spec.lane_width)))
    xs, ys, lanes = [], [], []
    for k in range(n_xl):
        yc = spec.y_min + (k + 0.5) * spec.lane_width
        run = along_x if k % 2 == 0 else along_x[::-1]
        xs.append(run)
        ys.append(np.full(run.size, yc))
        lanes.append(np.full(run.size, k + 1))
    xdrive = np.column_stack([np.concatenate(xs), np.concatenate(ys)]), np.concatenate(lanes)
    xs, ys, lanes = [], [], []
    for k in range(n_yl):
        xc = spec.x_min + (k + 0.5) * spec.lane_width
        xs.append(np.full(along_y.size, xc))
        ys.append(along_y)
        lanes.append(np.full(along_y.size, k + 1))
    ydrive = np.column_stack([np.concatenate(xs), np.concatenate(ys)]), np.concatenate(lanes)
    return xdrive, ydrive


def generate_testbed(spec: TestBedSpec, field_spec: FieldSpec):
    """Simulate both driving passes over one latent field.

    Returns
    -------
    ds_x, ds_y : Dataset
        x-driving (snaking) and y-driving (bottom-to-top) observations.
    truth : GroundTruth
        Latent field, trend and per-lane biases at every observation.

    Notes
    -----
    Random streams are split by purpose (latent field, x noise, y noise,
    lane biases), so changing ``lane_error_sd`` or a noise level leaves the
    other components of a given seed unchanged.
    """
    (cx, lane_x), (cy, lane_y) = _lane_layout(spec)
    allpts = np.vstack([cx, cy])
    keys = np.round(allpts / (1e-6 * spec.spacing_along)).astype(np.int64)
    uniq, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    locs = allpts[first]
    latent_spec = FieldSpec(field_spec.params, field_spec.anisotropy)
    sampler = FieldSampler(locs, latent_spec)
    z = sampler.draw(replicate_rng(spec.seed, 0))
    zx, zy = z[inverse[:len(cx)]], z[inverse[len(cx):]]
    tx, ty = field_spec.trend(cx), field_spec.trend(cy)
    nx_lanes = int(lane_x.max())
    lane_err = spec.lane_error_sd * replicate_rng(spec.seed, 3).standard_normal(nx_lanes)
    ks_x = (zx + tx + field_spec.noise_sd_x * replicate_rng(spec.seed, 1).standard_normal(len(cx))
            + lane_err[lane_x - 1])
    ks_y = zy + ty + field_spec.noise_sd_y * replicate_rng(spec.seed, 2).standard_normal(len(cy))
    ds_x = Dataset(cx[:, 0], cx[:, 1], ks_x, lane_x, DrivingDirection.X)
    ds_y = Dataset(cy[:, 0], cy[:, 1], ks_y, lane_y, DrivingDirection.Y)
    truth = GroundTruth(spec, field_spec, zx, zy, tx, ty, lane_err, sampler.jitter)
    return ds_x, ds_y, truth

"""Large-scale trend removal: polynomial regression and 2-D loess.

Both detrenders work on standardized coordinates (see
:func:`compactstat.geodata.center_scale`) and return residuals
``ks - mu_hat(s)`` that carry the small-scale variation plus noise.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.spatial import cKDTree

from .geodata import Dataset, ScaleConstants, center_scale

__all__ = [
    "DetrendError",
    "TrendModel",
    "Residuals",
    "monomial_powers",
    "polynomial_design",
    "fit_polynomial",
    "fit_loess",
]

log = logging.getLogger(__name__)


class DetrendError(ValueError):
    pass


def monomial_powers(degree: int) -> list[tuple[int, int]]:
    """Exponent pairs ``(a, b)`` for ``x**a * y**b`` in graded lexicographic order."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    return [(a, d - a) for d in range(degree + 1) for a in range(d, -1, -1)]


def polynomial_design(coords, degree: int) -> np.ndarray:
    """Design matrix of all monomials with total degree <= ``degree``.

    Columns are ordered by total degree, then by the power of x descending,
    so degree 1 gives ``(1, x, y)``. The column count is
    ``(degree + 1) * (degree + 2) / 2``.
    """
    if int(degree) != degree or degree < 1:
        raise ValueError(f"degree must be a positive integer, got {degree}")
    c = np.atleast_2d(np.asarray(coords, dtype=float))
    if not np.all(np.isfinite(c)):
        raise ValueError("coordinates must be finite")
    x, y = c[:, 0], c[:, 1]
    xp = [np.ones_like(x)]
    yp = [np.ones_like(y)]
    for _ in range(degree):
        xp.append(xp[-1] * x)
        yp.append(yp[-1] * y)
    return np.column_stack([xp[a] * yp[b] for a, b in monomial_powers(degree)])


def _column_name(a, b):
    parts = [f"x^{a}" if a > 1 else "x" if a == 1 else "", f"y^{b}" if b > 1 else "y" if b == 1 else ""]
    return "*".join(p for p in parts if p) or "1"


@dataclass(frozen=True, eq=False)
class TrendModel:
    """A fitted mean surface ``mu_hat(s)``.

    ``kind`` is ``"polynomial"`` or ``"loess"``. Polynomial models keep their
    coefficients; loess models keep the training sample and final robustness
    weights so the surface can be re-evaluated anywhere.
    """

    kind: str
    scale: ScaleConstants
    degree: int
    coefficients: np.ndarray | None = None
    span: float | None = None
    robust_iters: int = 0
    _train_xy: np.ndarray | None = field(default=None, repr=False)
    _train_z: np.ndarray | None = field(default=None, repr=False)
    _robust_w: np.ndarray | None = field(default=None, repr=False)

    def predict(self, coords) -> np.ndarray:
        """Evaluate the trend at raw coordinates ``(n, 2)``."""
        s = self.scale.forward(np.atleast_2d(coords))
        if self.kind == "polynomial":
            return polynomial_design(s, self.degree) @ self.coefficients
        return _loess_eval(
            self._train_xy, self._train_z, self._robust_w, s, self.span, self.degree
        )

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "degree": self.degree, "scaling": self.scale.to_dict()}
        if self.kind == "polynomial":
            d["coefficients"] = [float(v) for v in self.coefficients]
            d["columns"] = [_column_name(a, b) for a, b in monomial_powers(self.degree)]
        else:
            d["span"] = self.span
            d["robust_iters"] = self.robust_iters
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass(frozen=True, eq=False)
class Residuals:
    values: np.ndarray
    dataset: Dataset

    def __post_init__(self):
        if len(self.values) != len(self.dataset):
            raise ValueError("residual count differs from dataset size")

    def __len__(self):
        return len(self.values)

    @property
    def coords(self) -> np.ndarray:
        return self.dataset.coords


def _ols_qr(X, z, names=None):
    """Least squares through column-pivoted QR; raises on numerical rank deficiency."""
    n, p = X.shape
    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag[0] * max(n, p) * np.finfo(float).eps * 1e3 if p else 0.0
    rank = int(np.sum(diag > tol))
    if rank < p:
        bad = sorted(int(c) for c in piv[rank:])
        if names is not None:
            bad = [names[c] for c in bad]
        raise DetrendError(
            f"design matrix is rank deficient (rank {rank} < {p}); collinear columns: {bad}"
        )
    coef = np.empty(p)
    coef[piv] = scipy.linalg.solve_triangular(R, Q.T @ z)
    return coef


def fit_polynomial(ds: Dataset, degree: int = 5) -> tuple[TrendModel, Residuals]:
    """Ordinary least-squares polynomial trend on standardized coordinates.

    Raises
    ------
    DetrendError
        If there are not more observations than columns, or if the design is
        rank deficient (the message lists the collinear monomials).
    """
    if int(degree) != degree or degree < 1:
        raise DetrendError(f"degree must be a positive integer, got {degree}")
    p = (degree + 1) * (degree + 2) // 2
    if len(ds) <= p:
        raise DetrendError(f"need more than {p} observations for degree {degree}, got {len(ds)}")
    scaled, const = center_scale(ds)
    X = polynomial_design(scaled, degree)
    names = [_column_name(a, b) for a, b in monomial_powers(degree)]
    coef = _ols_qr(X, ds.ks, names)
    resid = ds.ks - X @ coef
    sd = float(np.std(ds.ks, ddof=1))
    if abs(resid.mean()) > 1e-8 * max(sd, 1e-300) and abs(resid.mean()) > 1e-12 * max(1.0, abs(ds.ks).max()):
        log.warning("polynomial residual mean %.3g is not ~0", resid.mean())
    model = TrendModel("polynomial", const, int(degree), coefficients=coef)
    return model, Residuals(resid, ds)


def _tricube(u):
    u = np.clip(u, 0.0, 1.0)
    return (1.0 - u**3) ** 3


def _bisquare(u):
    u = np.clip(np.abs(u), 0.0, 1.0)
    return (1.0 - u**2) ** 2


def _loess_eval(train_xy, train_z, robust_w, query_xy, span, degree, chunk=256):
    n = train_xy.shape[0]
    k = int(math.ceil(span * n))
    k = min(max(k, 1), n)
    tree = cKDTree(train_xy)
    out = np.empty(query_xy.shape[0])
    for start in range(0, query_xy.shape[0], chunk):
        q = query_xy[start:start + chunk]
        dist, idx = tree.query(q, k=k)
        dist = dist.reshape(len(q), k)
        idx = idx.reshape(len(q), k)
        dmax = dist[:, -1:]
        with np.errstate(invalid="ignore", divide="ignore"):
            u = np.where(dmax > 0, dist / dmax, 0.0)
        w = _tricube(u) * robust_w[idx]
        # Local polynomial centred on the query point: the fit at the point is
        # the intercept.
        local = train_xy[idx] - q[:, None, :]
        X = polynomial_design(local.reshape(-1, 2), degree).reshape(len(q), k, -1)
        Xw = X * w[..., None]
        XtWX = np.einsum("bki,bkj->bij", Xw, X)
        XtWz = np.einsum("bki,bk->bi", Xw, train_z[idx])
        for b in range(len(q)):
            try:
                c, low = scipy.linalg.cho_factor(XtWX[b], check_finite=False)
                beta = scipy.linalg.cho_solve((c, low), XtWz[b], check_finite=False)
                if not np.all(np.isfinite(beta)):
                    raise np.linalg.LinAlgError
                if np.linalg.cond(XtWX[b]) > 1e13:
                    raise np.linalg.LinAlgError
            except (np.linalg.LinAlgError, ValueError):
                raise DetrendError(
                    f"singular local weight matrix at scaled location {tuple(q[b])}"
                ) from None
            out[start + b] = beta[0]
    return out


def fit_loess(ds: Dataset, span: float = 0.5, degree: int = 2, robust_iters: int = 2):
    """Two-dimensional loess detrending with optional robustness iterations.

    Each fit uses the ``ceil(span * n)`` nearest observations in standardized
    coordinates, tricube distance weights and a local polynomial of
    ``degree`` 1 or 2. Robustness passes multiply in bisquare weights of
    the residuals scaled by six times their median absolute value.

    Returns
    -------
    (TrendModel, Residuals)
    """
    if not (0 < span <= 1):
        raise DetrendError(f"span must lie in (0, 1], got {span}")
    if degree not in (1, 2):
        raise DetrendError(f"loess degree must be 1 or 2, got {degree}")
    if robust_iters < 0:
        raise DetrendError("robust_iters must be non-negative")
    n = len(ds)
    if n < 10:
        raise DetrendError(f"loess needs at least 10 observations, got {n}")
    p = (degree + 1) * (degree + 2) // 2
    if span * n < p:
        raise DetrendError(f"span * n = {span * n:.3g} is below the {p} local coefficients")
    scaled, const = center_scale(ds)
    z = np.asarray(ds.ks, dtype=float)
    rw = np.ones(n)
    fit = _loess_eval(scaled, z, rw, scaled, span, degree)
    for _ in range(robust_iters):
        resid = z - fit
        s = np.median(np.abs(resid))
        if s <= 1e-12 * max(1.0, np.abs(z).max()):
            break
        rw = _bisquare(resid / (6.0 * s))
        fit = _loess_eval(scaled, z, rw, scaled, span, degree)
    model = TrendModel(
        "loess", const, int(degree), span=float(span), robust_iters=int(robust_iters),
        _train_xy=scaled, _train_z=z, _robust_w=rw,
    )
    return model, Residuals(z - fit, ds)

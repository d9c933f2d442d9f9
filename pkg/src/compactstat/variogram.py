"""Omnidirectional and directional empirical semivariograms.

The classical (Matheron) estimator

    gamma_hat(B) = 1 / (2 |B|) * sum_{(i, j) in B} (v_i - v_j)**2

is accumulated over unordered point pairs. Pairs are enumerated through a
uniform grid of cells of side ``max_lag`` so only neighbouring cells are
compared. Bin sums use :func:`math.fsum`, which is correctly rounded, so the
result does not depend on pair order or on how the work is split between
threads.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

__all__ = [
    "Direction",
    "VariogramConfig",
    "EmpiricalSemivariogram",
    "VariogramError",
    "subsample",
    "empirical_semivariogram",
    "default_max_lag",
    "enumerate_pairs",
]


class VariogramError(ValueError):
    pass


class Direction(str, enum.Enum):
    OMNI = "omni"
    X = "x"
    Y = "y"


@dataclass(frozen=True)
class VariogramConfig:
    """Binning and direction settings.

    ``max_lag=None`` resolves to half the largest pairwise distance when the
    semivariogram is computed; ``subsample_size``/``seed`` are applied by
    callers that subsample first (the CLI and the backfitting loop).
    """

    max_lag: float | None = None
    n_bins: int = 20
    direction: Direction = Direction.OMNI
    angle_tol: float = 22.5
    subsample_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        if self.max_lag is not None and not self.max_lag > 0:
            raise ValueError("max_lag must be positive")
        if self.n_bins < 2:
            raise ValueError("n_bins must be >= 2")
        if not 0 < self.angle_tol <= 90:
            raise ValueError("angle_tol must lie in (0, 90]")
        if self.subsample_size is not None and self.subsample_size < 1:
            raise ValueError("subsample_size must be positive")

    def edges(self) -> np.ndarray:
        return np.linspace(0.0, self.max_lag, self.n_bins + 1)

    def to_dict(self):
        d = asdict(self)
        d["direction"] = self.direction.value
        return d


@dataclass(frozen=True, eq=False)
class EmpiricalSemivariogram:
    lags: np.ndarray
    gamma: np.ndarray
    n_pairs: np.ndarray
    config: VariogramConfig

    @property
    def direction(self) -> Direction:
        return self.config.direction

    @property
    def nonempty(self) -> np.ndarray:
        return self.n_pairs > 0

    def compressed(self):
        """(lags, gamma, n_pairs) restricted to non-empty bins."""
        m = self.nonempty
        return self.lags[m], self.gamma[m], self.n_pairs[m]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lag", "gamma", "n_pairs", "direction"])
            for h, g, n in zip(self.lags, self.gamma, self.n_pairs):
                w.writerow([repr(float(h)), "" if n == 0 else repr(float(g)), int(n),
                            self.direction.value])

    def config_json(self) -> str:
        return json.dumps(self.config.to_dict(), indent=2)


def subsample(collection, size: int, seed: int):
    """Uniform sample without replacement, keeping the original order.

    ``collection`` is anything indexable by an integer array with a length
    (a :class:`~compactstat.geodata.Dataset`, an ndarray). Returns
    ``(subset, indices)``.
    """
    n = len(collection)
    if not 0 < size <= n:
        raise VariogramError(f"subsample size must lie in [1, {n}], got {size}")
    if size == n:
        idx = np.arange(n)
    else:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(n, size=size, replace=False))
    if hasattr(collection, "take"):
        return collection.take(idx), idx
    return np.asarray(collection)[idx], idx


def default_max_lag(points) -> float:
    """Half the largest pairwise distance (the diameter of the point set)."""
    from scipy.spatial import ConvexHull, QhullError
    from scipy.spatial.distance import pdist

    pts = np.asarray(points, dtype=float)
    try:
        cand = pts[ConvexHull(pts).vertices] if len(pts) > 3 else pts
    except QhullError:
        cand = pts[[pts[:, 0].argmin(), pts[:, 0].argmax(), pts[:, 1].argmin(), pts[:, 1].argmax()]]
    return 0.5 * float(pdist(cand).max())


def _angle_ok(dx, dy, direction, angle_tol):
    if direction == Direction.OMNI:
        return np.ones(dx.shape, dtype=bool)
    ax, ay = np.abs(dx), np.abs(dy)
    if direction == Direction.X:
        ang = np.degrees(np.arctan2(ay, ax))
    else:
        ang = np.degrees(np.arctan2(ax, ay))
    return ang <= angle_tol


def _bin_index(h, edges):
    # Half-open on the left, closed on the right: an edge value belongs to
    # the lower bin; h == 0 maps to -1 and is dropped.
    return np.searchsorted(edges, h, side="left") - 1


# Neighbour offsets covering each unordered cell pair once.
_HALF_STENCIL = ((1, 0), (-1, 1), (0, 1), (1, 1))


def enumerate_pairs(points, max_lag, workers: int = 1):
    """All unordered pairs ``i < j`` with ``0 < |s_i - s_j| <= max_lag``.

    Returns ``(i, j)`` index arrays sorted lexicographically, independent of
    ``workers``.
    """
    pts = np.asarray(points, dtype=float)
    cell = np.floor((pts - pts.min(axis=0)) / max_lag).astype(np.int64)
    ncx = int(cell[:, 0].max()) + 1
    key = cell[:, 1] * ncx + cell[:, 0]
    order = np.argsort(key, kind="stable")
    skey = key[order]
    uniq, starts = np.unique(skey, return_index=True)
    ends = np.append(starts[1:], len(skey))
    lookup = {int(k): (int(s), int(e)) for k, s, e in zip(uniq, starts, ends)}
    cells = [(int(k) % ncx, int(k) // ncx) for k in uniq]
    lim2 = max_lag * max_lag

    def close_pairs(a, b, same):
        out_i, out_j = [], []
        pb = pts[b]
        for s in range(0, len(a), 512):
            ac = a[s:s + 512]
            pa = pts[ac]
            r2 = (pa[:, None, 0] - pb[None, :, 0]) ** 2 + (pa[:, None, 1] - pb[None, :, 1]) ** 2
            mask = r2 <= lim2
            if same:
                mask &= np.arange(s, s + len(ac))[:, None] < np.arange(len(b))[None, :]
            ii, jj = np.nonzero(mask)
            out_i.append(ac[ii])
            out_j.append(b[jj])
        return out_i, out_j

    def block(cx, cy):
        s, e = lookup[cy * ncx + cx]
        a = order[s:e]
        out_i, out_j = close_pairs(a, a, True)
        for ox, oy in _HALF_STENCIL:
            nx_, ny_ = cx + ox, cy + oy
            if nx_ < 0 or nx_ >= ncx:
                continue
            hit = lookup.get(ny_ * ncx + nx_)
            if hit is None:
                continue
            pi, pj = close_pairs(a, order[hit[0]:hit[1]], False)
            out_i += pi
            out_j += pj
        return np.concatenate(out_i), np.concatenate(out_j)

    if workers > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda c: block(*c), cells))
    else:
        parts = [block(*c) for c in cells]
    if not parts:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    i = np.concatenate([p[0] for p in parts])
    j = np.concatenate([p[1] for p in parts])
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    srt = np.lexsort((hi, lo))
    return lo[srt], hi[srt]


def empirical_semivariogram(points, values, cfg: VariogramConfig | None = None,
                            workers: int = 1) -> EmpiricalSemivariogram:
    """Classical binned semivariogram of ``values`` observed at ``points``.

    Bins are uniform on ``(0, max_lag]`` with lags reported at bin midpoints;
    a distance on a bin edge falls in the lower bin and coincident points
    are ignored. Directional configurations keep a pair when the angle
    between its separation vector and the named axis is at most
    ``angle_tol`` degrees. Empty bins have ``gamma = nan`` and
    ``n_pairs = 0``.
    """
    cfg = cfg or VariogramConfig()
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    v = np.asarray(values, dtype=float).ravel()
    if pts.shape[0] != v.size:
        raise VariogramError(f"{pts.shape[0]} points but {v.size} values")
    if v.size < 2:
        raise VariogramError("need at least two points")
    if cfg.max_lag is None:
        cfg = replace(cfg, max_lag=default_max_lag(pts))
        if not cfg.max_lag > 0:
            raise VariogramError("all points coincide")
    edges = cfg.edges()
    i, j = enumerate_pairs(pts, cfg.max_lag, workers=workers)
    d = pts[j] - pts[i]
    h = np.hypot(d[:, 0], d[:, 1])
    b = _bin_index(h, edges)
    keep = (b >= 0) & (b < cfg.n_bins) & _angle_ok(d[:, 0], d[:, 1], cfg.direction, cfg.angle_tol)
    b = b[keep]
    sq = (v[i[keep]] - v[j[keep]]) ** 2
    counts = np.bincount(b, minlength=cfg.n_bins)
    gamma = np.full(cfg.n_bins, np.nan)
    order = np.argsort(b, kind="stable")
    splits = np.split(sq[order], np.cumsum(counts)[:-1])
    for k, chunk in enumerate(splits):
        if counts[k]:
            gamma[k] = math.fsum(chunk.tolist()) / (2.0 * counts[k])
    if counts.sum() == 0:
        raise VariogramError("all bins are empty; max_lag may be too small")
    lags = 0.5 * (edges[:-1] + edges[1:])
    return EmpiricalSemivariogram(lags, gamma, counts, cfg)

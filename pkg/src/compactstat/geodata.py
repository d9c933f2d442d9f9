"""Roller measurement data model, CSV ingestion and coordinate transforms.

A roller pass records ``(x, y, ks, lane)`` tuples. Records from one driving
direction form a :class:`Dataset`. The lattice helpers build the regular grid
used by the backfitting model and the nearest-node incidence operator that
maps observations onto it.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "DrivingDirection",
    "RMVRecord",
    "Dataset",
    "ScaleConstants",
    "AnisotropyTransform",
    "Lattice",
    "MappingOperator",
    "DataError",
    "load_dataset",
    "write_dataset",
    "center_scale",
    "apply_anisotropy",
    "build_mapping",
    "DEFAULT_LATTICE",
]

CSV_HEADER = ("x", "y", "ks", "lane")


class DataError(ValueError):
    """Raised for malformed input data or violated geometric preconditions."""


class DrivingDirection(str, enum.Enum):
    X = "x"
    Y = "y"


@dataclass(frozen=True)
class RMVRecord:
    x: float
    y: float
    ks: float
    lane: int

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.ks)):
            raise DataError(f"non-finite value in record {self}")
        if self.lane < 1:
            raise DataError(f"lane index must be >= 1, got {self.lane}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented collection of roller records from one driving direction.

    Columns are stored as read-only numpy arrays; ``records`` rebuilds the
    row view on demand.
    """

    x: np.ndarray
    y: np.ndarray
    ks: np.ndarray
    lane: np.ndarray
    driving_direction: DrivingDirection = DrivingDirection.X

    def __post_init__(self):
        cols = {}
        for name in CSV_HEADER:
            dtype = np.int64 if name == "lane" else np.float64
            arr = np.array(getattr(self, name), dtype=dtype).ravel()
            arr.setflags(write=False)
            cols[name] = arr
            object.__setattr__(self, name, arr)
        n = cols["x"].size
        if n == 0:
            raise DataError("empty dataset")
        if any(c.size != n for c in cols.values()):
            raise DataError("column lengths differ")
        for name in ("x", "y", "ks"):
            if not np.all(np.isfinite(cols[name])):
                raise DataError(f"non-finite values in column {name!r}")
        if np.any(cols["lane"] < 1):
            raise DataError("lane indices must be >= 1")
        object.__setattr__(
            self, "driving_direction", DrivingDirection(self.driving_direction)
        )

    @classmethod
    def from_records(cls, records, driving_direction=DrivingDirection.X):
        records = list(records)
        if not records:
            raise DataError("empty dataset")
        return cls(
            x=[r.x for r in records],
            y=[r.y for r in records],
            ks=[r.ks for r in records],
            lane=[r.lane for r in records],
            driving_direction=driving_direction,
        )

    @property
    def records(self) -> list[RMVRecord]:
        return [
            RMVRecord(float(a), float(b), float(c), int(d))
            for a, b, c, d in zip(self.x, self.y, self.ks, self.lane)
        ]

    @property
    def coords(self) -> np.ndarray:
        """(n, 2) array of raw coordinates."""
        return np.column_stack([self.x, self.y])

    def __len__(self):
        return self.x.size

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.x[idx], self.y[idx], self.ks[idx], self.lane[idx],
            self.driving_direction,
        )

    def with_values(self, ks) -> "Dataset":
        return Dataset(self.x, self.y, ks, self.lane, self.driving_direction)


def load_dataset(path, direction=DrivingDirection.X) -> Dataset:
    """Read a roller CSV with header ``x,y,ks,lane``.

    Row numbers in error messages count data rows from 1 (header excluded).
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty dataset") from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise DataError(f"expected header {','.join(CSV_HEADER)}, got {','.join(header)}")
        cols = ([], [], [], [])
        for rownum, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise DataError(f"row {rownum}: expected 4 fields, got {len(row)}")
            try:
                x, y, ks = (float(v) for v in row[:3])
                lane_f = float(row[3])
            except ValueError as exc:
                raise DataError(f"row {rownum}: {exc}") from None
            if not all(math.isfinite(v) for v in (x, y, ks, lane_f)):
                raise DataError(f"row {rownum}: non-finite value")
            if lane_f != int(lane_f) or lane_f < 1:
                raise DataError(f"row {rownum}: lane must be a positive integer")
            for col, v in zip(cols, (x, y, ks, int(lane_f))):
                col.append(v)
    if not cols[0]:
        raise DataError("empty dataset")
    return Dataset(*cols, driving_direction=direction)


def write_dataset(ds: Dataset, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for x, y, ks, lane in zip(ds.x, ds.y, ds.ks, ds.lane):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(ks)), int(lane)])


@dataclass(frozen=True)
class ScaleConstants:
    """Per-axis mean and standard deviation used to standardize coordinates."""

    mean: tuple[float, float]
    sd: tuple[float, float]

    def forward(self, coords) -> np.ndarray:
        c = np.asarray(coords, dtype=float)
        return (c - np.asarray(self.mean)) / np.asarray(self.sd)

    def inverse(self, scaled) -> np.ndarray:
        s = np.asarray(scaled, dtype=float)
        return s * np.asarray(self.sd) + np.asarray(self.mean)

    def to_dict(self):
        return {"mean": list(self.mean), "sd": list(self.sd)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["mean"]), tuple(d["sd"]))


def center_scale(ds) -> tuple[np.ndarray, ScaleConstants]:
    """Standardize each coordinate axis to mean 0 and sample sd 1.

    Parameters
    ----------
    ds : Dataset or array_like of shape (n, 2)

    Returns
    -------
    scaled : ndarray (n, 2)
    constants : ScaleConstants
        Invert with ``constants.inverse(scaled)``.
    """
    coords = ds.coords if isinstance(ds, Dataset) else np.asarray(ds, dtype=float)
    coords = np.atleast_2d(coords)
    if coords.shape[0] < 2:
        raise DataError("need at least two points to standardize coordinates")
    mean = coords.mean(axis=0)
    sd = coords.std(axis=0, ddof=1)
    for axis, (m, s) in enumerate(zip(mean, sd)):
        if not s > 1e-12 * max(1.0, abs(m)):
            raise DataError(f"zero variance on coordinate axis {'xy'[axis]}")
    const = ScaleConstants((float(mean[0]), float(mean[1])), (float(sd[0]), float(sd[1])))
    return const.forward(coords), const


@dataclass(frozen=True)
class AnisotropyTransform:
    """Geometric range anisotropy ``A = diag(1, rho)``.

    ``rho`` is the ratio of the x-range to the y-range: stretching y by
    ``rho`` makes an anisotropic field isotropic.
    """

    rho: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.rho) and self.rho > 0):
            raise ValueError(f"rho must be positive, got {self.rho}")

    @property
    def matrix(self) -> np.ndarray:
        return np.diag([1.0, self.rho])


def apply_anisotropy(points, t) -> np.ndarray:
    """Map ``(x, y) -> (x, rho * y)``; ``t`` may be a transform or a bare ratio."""
    rho = t.rho if isinstance(t, AnisotropyTransform) else AnisotropyTransform(float(t)).rho
    pts = np.array(points, dtype=float, copy=True)
    pts = np.atleast_2d(pts)
    if pts.shape[-1] != 2:
        raise ValueError("points must have shape (n, 2)")
    if rho != 1.0:
        pts[:, 1] *= rho
    return pts


@dataclass(frozen=True)
class Lattice:
    nx: int
    ny: int
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("lattice needs at least 2 nodes per axis")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("lattice bounds must satisfy min < max")

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / (self.ny - 1)

    def node_coords(self) -> np.ndarray:
        """(nx*ny, 2) node coordinates; flat index is ``j * nx + i``."""
        i = np.arange(self.nx)
        j = np.arange(self.ny)
        xs = self.x_min + i * (self.x_max - self.x_min) / (self.nx - 1)
        ys = self.y_min + j * (self.y_max - self.y_min) / (self.ny - 1)
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def contains(self, coords) -> np.ndarray:
        c = np.atleast_2d(coords)
        return (
            (c[:, 0] >= self.x_min) & (c[:, 0] <= self.x_max)
            & (c[:, 1] >= self.y_min) & (c[:, 1] <= self.y_max)
        )

    def to_dict(self):
        return {k: getattr(self, k) for k in ("nx", "ny", "x_min", "x_max", "y_min", "y_max")}

    @classmethod
    def parse(cls, text: str) -> "Lattice":
        """Parse ``NX,NY,XMIN,XMAX,YMIN,YMAX``."""
        parts = text.split(",")
        if len(parts) != 6:
            raise ValueError("lattice must be NX,NY,XMIN,XMAX,YMIN,YMAX")
        return cls(int(parts[0]), int(parts[1]), *(float(p) for p in parts[2:]))


DEFAULT_LATTICE = Lattice(80, 80, 25.0, 55.0, -0.5, 33.0)


@dataclass(frozen=True, eq=False)
class MappingOperator:
    """Observation-to-node incidence ``H``: row k has a single 1 at ``assignments[k]``."""

    assignments: np.ndarray
    n_nodes: int
    lattice: Lattice | None = field(default=None, compare=False)

    def __post_init__(self):
        a = np.asarray(self.assignments, dtype=np.int64).ravel()
        if a.size and (a.min() < 0 or a.max() >= self.n_nodes):
            raise ValueError("node index out of range")
        a.setflags(write=False)
        object.__setattr__(self, "assignments", a)

    @property
    def n_obs(self) -> int:
        return self.assignments.size

    def apply(self, node_values) -> np.ndarray:
        """``H @ alpha``: lattice values at observation locations."""
        return np.asarray(node_values)[self.assignments]

    def counts(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.n_nodes)

    def node_means(self, values):
        """Mean of observation values per node; returns (means, counts), NaN where empty."""
        values = np.asarray(values, dtype=float)
        cnt = self.counts()
        sums = np.bincount(self.assignments, weights=values, minlength=self.n_nodes)
        with np.errstate(invalid="ignore", divide="ignore"):
            means = np.where(cnt > 0, sums / np.maximum(cnt, 1), np.nan)
        return means, cnt

    def to_sparse(self):
        from scipy import sparse

        n = self.n_obs
        return sparse.csr_matrix(
            (np.ones(n), (np.arange(n), self.assignments)), shape=(n, self.n_nodes)
        )

    def to_json(self) -> str:
        d = dict(self.lattice.to_dict()) if self.lattice is not None else {}
        d["assignments"] = self.assignments.tolist()
        return json.dumps(d)

    @classmethod
    def from_json(cls, text: str) -> "MappingOperator":
        d = json.loads(text)
        lat = Lattice(**{k: d[k] for k in ("nx", "ny", "x_min", "x_max", "y_min", "y_max")})
        return cls(np.asarray(d["assignments"]), lat.size, lat)


def build_mapping(ds, lat: Lattice) -> MappingOperator:
    """Assign every observation to its nearest lattice node.

    Equidistant nodes resolve to the smallest flat index ``j * nx + i``.
    """
    coords = ds.coords if isinstance(ds, Dataset) else np.atleast_2d(np.asarray(ds, float))
    inside = lat.contains(coords)
    if not inside.all():
        k = int(np.flatnonzero(~inside)[0])
        raise DataError(
            f"observation {k} at ({coords[k, 0]}, {coords[k, 1]}) lies outside the lattice"
        )
    nodes = lat.node_coords()
    # The nearest node is one of the 4 surrounding cell corners; query a few
    # extra so exact ties can be resolved by index.
    tree = cKDTree(nodes)
    k = min(8, nodes.shape[0])
    dist, idx = tree.query(coords, k=k)
    d2 = ((nodes[idx] - coords[:, None, :]) ** 2).sum(axis=-1)
    best = d2.min(axis=1, keepdims=True)
    cand = np.where(d2 <= best, idx, np.iinfo(np.int64).max)
    assign = cand.min(axis=1)
    return MappingOperator(assign, lat.size, lat)

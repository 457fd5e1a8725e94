"""Pooled point storage, distance metrics and exact k-nearest-neighbour queries.

The pooled sample stacks X first and Y second, so pooled positions ``0..N-1``
are X points and ``N..N+M-1`` are Y points. Neighbour lists are ordered by
distance with ties broken by ascending pooled position.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import _backend
from ._kdtree_py import libm_pow
from ._tree import FlatTree
from .errors import EstimatorError

X_LABEL = "X"
Y_LABEL = "Y"


@dataclass(frozen=True)
class Metric:
    """Distance on R^d.

    ``p`` selects a Minkowski metric (``2`` Euclidean, ``1`` Manhattan,
    ``inf`` Chebyshev). A ``func`` overrides ``p`` and disables the tree.
    """

    p: float = 2.0
    func: Callable[[np.ndarray, np.ndarray], float] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.func is None and not (self.p >= 1.0):
            raise EstimatorError(f"Minkowski exponent must be >= 1, got {self.p}")

    @classmethod
    def euclidean(cls) -> Metric:
        return cls(2.0)

    @classmethod
    def chebyshev(cls) -> Metric:
        return cls(math.inf)

    @classmethod
    def custom(cls, func) -> Metric:
        return cls(math.nan, func)

    @classmethod
    def parse(cls, name: str) -> Metric:
        """Parse ``euclidean``, ``manhattan``, ``chebyshev`` or ``minkowski:<p>``."""
        name = name.strip().lower()
        fixed = {"euclidean": 2.0, "l2": 2.0, "manhattan": 1.0, "l1": 1.0,
                 "chebyshev": math.inf, "linf": math.inf}
        if name in fixed:
            return cls(fixed[name])
        if name.startswith(("minkowski:", "lp:")):
            return cls(float(name.split(":", 1)[1]))
        raise EstimatorError(f"unknown metric {name!r}")

    @property
    def is_coordinate(self) -> bool:
        return self.func is None

    def distance(self, a, b) -> float:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if self.func is not None:
            return float(self.func(a, b))
        return float(scan_distances(a[None, :], b, self.p)[0])


def scan_distances(points: np.ndarray, query: np.ndarray, p: float) -> np.ndarray:
    """Distances from ``query`` to every row of ``points``.

    Accumulates coordinate by coordinate in the same order as the tree kernels,
    so the values are bit-identical to what they report.
    """
    acc = np.zeros(points.shape[0])
    for j in range(points.shape[1]):
        diff = np.abs(points[:, j] - query[j])
        if p == 2.0:
            acc = acc + diff * diff
        elif p == 1.0:
            acc = acc + diff
        elif p == math.inf:
            acc = np.maximum(acc, diff)
        else:
            acc = acc + libm_pow(diff, p)
    if p == 2.0:
        return np.sqrt(acc)
    if p in (1.0, math.inf):
        return acc
    return libm_pow(acc, 1.0 / p)


def as_points(x, name="points") -> np.ndarray:
    """Coerce to a C-contiguous float64 array of shape (n, d)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise EstimatorError(f"{name} must be a 2-D array of points")
    if arr.shape[0] == 0:
        raise EstimatorError(f"{name} is empty")
    if arr.shape[1] == 0:
        raise EstimatorError(f"{name} has dimension 0")
    if not np.all(np.isfinite(arr)):
        raise EstimatorError(f"{name} contains non-finite values")
    return np.ascontiguousarray(arr)


def load_points(path, header: bool = False) -> np.ndarray:
    """Read one point per row from a comma-separated file."""
    arr = np.loadtxt(path, delimiter=",", skiprows=1 if header else 0,
                     ndmin=2, dtype=np.float64)
    return as_points(arr, str(path))


class Neighbor(NamedTuple):
    label: str
    distance: float
    position: int


class PooledIndex:
    """Immutable index over Z = X ∪ Y with per-point labels."""

    def __init__(self, x, y, metric: Metric | None = None, leafsize: int = 16):
        x = as_points(x, "X")
        y = as_points(y, "Y")
        if x.shape[1] != y.shape[1]:
            raise EstimatorError(
                f"dimension mismatch: X has d={x.shape[1]}, Y has d={y.shape[1]}")
        self.metric = metric if metric is not None else Metric.euclidean()
        self.n = x.shape[0]
        self.m = y.shape[0]
        self.dim = x.shape[1]
        self.points = np.concatenate([x, y])
        self.is_x = np.arange(self.n + self.m) < self.n
        self.source_index = np.concatenate([np.arange(self.n), np.arange(self.m)])
        for arr in (self.points, self.is_x, self.source_index):
            arr.flags.writeable = False
        self.tree = FlatTree(self.points, leafsize) if self.metric.is_coordinate else None

    @property
    def size(self) -> int:
        return self.n + self.m

    def label(self, position: int) -> str:
        return X_LABEL if self.is_x[position] else Y_LABEL

    def y_positions(self) -> np.ndarray:
        return np.arange(self.n, self.n + self.m)

    def query(self, queries, k: int, exclude=None):
        """Batch query: ``(dist, pos)`` arrays of shape (q, k).

        ``exclude`` holds one pooled position per query to skip (``-1`` for none).
        """
        queries = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.float64)
        if queries.shape[1] != self.dim:
            raise EstimatorError(
                f"query dimension {queries.shape[1]} does not match index dimension {self.dim}")
        if exclude is None:
            exclude = np.full(queries.shape[0], -1, dtype=np.int64)
        exclude = np.asarray(exclude, dtype=np.int64)
        _check_k(k, self.size - int(np.any(exclude >= 0)))
        if self.tree is None:
            rows = [_scan_k(self, q, k, int(e)) for q, e in zip(queries, exclude)]
            return np.array([r[0] for r in rows]), np.array([r[1] for r in rows])
        return _backend.query_batch(self.tree, queries, int(k), exclude, float(self.metric.p))

    def query_y(self, k: int):
        """k nearest pooled neighbours of every Y point, each excluding itself."""
        pos = self.y_positions()
        return self.query(self.points[pos], k, pos)


def build_index(x, y, metric: Metric | None = None, leafsize: int = 16) -> PooledIndex:
    return PooledIndex(x, y, metric, leafsize)


def _check_k(k, available):
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise EstimatorError(f"k must be a positive integer, got {k!r}")
    if k > available:
        raise EstimatorError(f"k={k} exceeds the {available} eligible pooled points")


def _scan_k(index: PooledIndex, query, k, exclude):
    if index.metric.func is None:
        dist = scan_distances(index.points, query, index.metric.p)
    else:
        f = index.metric.func
        dist = np.array([float(f(query, z)) for z in index.points])
    pos = np.arange(index.size)
    if exclude >= 0:
        keep = pos != exclude
        pos, dist = pos[keep], dist[keep]
    order = np.lexsort((pos, dist))[:k]
    return dist[order], pos[order]


def _as_neighbors(index, dist, pos):
    return [Neighbor(index.label(int(p)), float(d), int(p)) for d, p in zip(dist, pos)]


def k_nearest(index: PooledIndex, query, k: int, exclude: int | None = None) -> list[Neighbor]:
    """Exact k nearest pooled neighbours of ``query``.

    ``exclude`` is the pooled position of the query itself when it belongs to
    the pooled sample; that point is skipped by identity, not by coordinates.
    """
    excl = -1 if exclude is None else int(exclude)
    dist, pos = index.query(np.asarray(query, dtype=np.float64).reshape(1, -1), k, [excl])
    return _as_neighbors(index, dist[0], pos[0])


def brute_force_k_nearest(index: PooledIndex, query, k: int,
                          exclude: int | None = None) -> list[Neighbor]:
    """Linear-scan reference for :func:`k_nearest`."""
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if query.shape[0] != index.dim:
        raise EstimatorError(
            f"query dimension {query.shape[0]} does not match index dimension {index.dim}")
    excl = -1 if exclude is None else int(exclude)
    _check_k(k, index.size - (excl >= 0))
    dist, pos = _scan_k(index, query, k, excl)
    return _as_neighbors(index, dist, pos)

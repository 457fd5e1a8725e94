"""Plug-in divergence estimators: estimate both densities at every Y point,
then evaluate the divergence formula on the ratio.

Densities are floored at ``DENSITY_FLOOR``; the number of floored values is
reported and a warning is attached when more than 10% of queries hit it.
"""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.special import gammaln

from . import _backend
from ._tree import FlatTree
from .errors import EstimatorError
from .metric_space import as_points
from .nnr import DivergenceEstimate, GFunction, renyi_from_J

DENSITY_FLOOR = 1e-12
FLOOR_WARN_FRACTION = 0.10


def unit_ball_volume(d: int) -> float:
    """Volume of the Euclidean unit ball, ``pi**(d/2) / Gamma(d/2 + 1)``."""
    return math.exp(0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1.0))


def knn_distance_table(points, queries, kmax: int, exclude=None) -> np.ndarray:
    """Sorted Euclidean distances from each query to its ``kmax`` nearest points."""
    points = as_points(points)
    queries = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.float64)
    if exclude is None:
        exclude = np.full(queries.shape[0], -1, dtype=np.int64)
    available = points.shape[0] - int(np.any(np.asarray(exclude) >= 0))
    if not 1 <= kmax <= available:
        raise EstimatorError(f"k={kmax} needs 1 <= k <= {available}")
    dist, _ = _backend.query_batch(FlatTree(points), queries, int(kmax), exclude, 2.0)
    return dist


def _knn_from_radius(rho, k, n_eff, d):
    vol = unit_ball_volume(d) * np.power(rho, d)
    floored = vol <= 0.0
    dens = k / (n_eff * np.where(floored, 1.0, vol))
    dens = np.where(floored, 1.0 / DENSITY_FLOOR, dens)
    low = dens < DENSITY_FLOOR
    return np.maximum(dens, DENSITY_FLOOR), int(np.sum(floored | low))


def knn_density(points, query, k: int, exclude: int | None = None) -> float:
    """``k / (N * c_d * rho_k**d)``; ``exclude`` drops one point (leave-one-out)."""
    points = as_points(points)
    excl = -1 if exclude is None else int(exclude)
    rho = knn_distance_table(points, np.asarray(query, float).reshape(1, -1), k, [excl])[0, -1]
    n_eff = points.shape[0] - (excl >= 0)
    dens, floored = _knn_from_radius(np.array([rho]), k, n_eff, points.shape[1])
    if floored:
        warnings.warn("k-NN density hit the floor (zero k-NN radius)", RuntimeWarning)
    return float(dens[0])


def _sq_distances(points, queries):
    acc = np.zeros((queries.shape[0], points.shape[0]))
    for j in range(points.shape[1]):
        diff = queries[:, j, None] - points[None, :, j]
        acc += diff * diff
    return acc


def kde_density_table(points, queries, bandwidths, exclude=None, chunk=1024) -> np.ndarray:
    """Gaussian-kernel densities, shape (len(bandwidths), q)."""
    points = as_points(points)
    queries = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.float64)
    hs = np.atleast_1d(np.asarray(bandwidths, dtype=np.float64))
    if np.any(hs <= 0):
        raise EstimatorError("bandwidth must be positive")
    n, d = points.shape
    excl = None if exclude is None else np.asarray(exclude, dtype=np.int64)
    n_eff = n - (1 if excl is not None and np.any(excl >= 0) else 0)
    out = np.empty((hs.shape[0], queries.shape[0]))
    for s in range(0, queries.shape[0], chunk):
        sq = _sq_distances(points, queries[s:s + chunk])
        if excl is not None:
            rows = np.nonzero(excl[s:s + chunk] >= 0)[0]
            sq[rows, excl[s:s + chunk][rows]] = np.inf
        for i, h in enumerate(hs):
            norm = n_eff * h ** d * (2.0 * math.pi) ** (d / 2.0)
            out[i, s:s + chunk] = np.exp(sq * (-0.5 / (h * h))).sum(axis=1) / norm
    return out


def kde_density(points, query, h: float, exclude: int | None = None) -> float:
    excl = None if exclude is None else [int(exclude)]
    val = kde_density_table(points, np.asarray(query, float).reshape(1, -1), [h], excl)[0, 0]
    return float(max(val, DENSITY_FLOOR))


def _combine(f1, f2, alpha, g):
    ratio = f1 / f2
    if alpha is not None:
        J = math.fsum(np.power(ratio, alpha)) / ratio.shape[0]
        return renyi_from_J(J, alpha)
    return math.fsum(g(ratio)) / ratio.shape[0]


def _plugin_result(f1, f2, floored, alpha, g, param, eta):
    m = f1.shape[0]
    value = _combine(f1, f2, alpha, g)
    est = DivergenceEstimate(value, value, eta, None)
    if floored > FLOOR_WARN_FRACTION * m:
        msg = f"density floor hit on {floored} of {m} queries ({param})"
        est.warnings.append(msg)
    return est


def _check_mode(alpha, g):
    if (alpha is None) == (g is None):
        raise EstimatorError("set exactly one of alpha or g")
    if alpha is not None and (not alpha > 0 or alpha == 1):
        raise EstimatorError("alpha must be positive and differ from 1")
    if isinstance(g, str):
        g = GFunction.parse(g)
    return g


def knn_plugin_sweep(x, y, ks, alpha=None, g=None) -> list[DivergenceEstimate]:
    """k-NN plug-in estimates for every k in ``ks`` from one pair of queries.

    Floor hits are recorded on each estimate's ``warnings`` list only, so a
    sweep over many parameters does not flood the warnings machinery.
    """
    g = _check_mode(alpha, g)
    x, y = as_points(x, "X"), as_points(y, "Y")
    if x.shape[1] != y.shape[1]:
        raise EstimatorError("dimension mismatch between X and Y")
    ks = [int(k) for k in ks]
    kmax = max(ks)
    m, d = y.shape
    r1 = knn_distance_table(x, y, kmax)
    r2 = knn_distance_table(y, y, kmax, np.arange(m))
    out = []
    for k in ks:
        f1, fl1 = _knn_from_radius(r1[:, k - 1], k, x.shape[0], d)
        f2, fl2 = _knn_from_radius(r2[:, k - 1], k, m - 1, d)
        est = _plugin_result(f1, f2, fl1 + fl2, alpha, g, f"k={k}", m / x.shape[0])
        est.k = k
        out.append(est)
    return out


def kde_plugin_sweep(x, y, bandwidths, alpha=None, g=None) -> list[DivergenceEstimate]:
    """KDE plug-in estimates for every bandwidth from one distance pass."""
    g = _check_mode(alpha, g)
    x, y = as_points(x, "X"), as_points(y, "Y")
    if x.shape[1] != y.shape[1]:
        raise EstimatorError("dimension mismatch between X and Y")
    m = y.shape[0]
    if m < 2:
        raise EstimatorError("leave-one-out KDE needs at least two Y points")
    t1 = kde_density_table(x, y, bandwidths)
    t2 = kde_density_table(y, y, bandwidths, np.arange(m))
    out = []
    for h, f1, f2 in zip(np.atleast_1d(bandwidths), t1, t2):
        floored = int(np.sum(f1 < DENSITY_FLOOR) + np.sum(f2 < DENSITY_FLOOR))
        f1 = np.maximum(f1, DENSITY_FLOOR)
        f2 = np.maximum(f2, DENSITY_FLOOR)
        out.append(_plugin_result(f1, f2, floored, alpha, g, f"h={h:g}", m / x.shape[0]))
    return out


def plugin_divergence(x, y, method: str, param, alpha=None, g=None) -> DivergenceEstimate:
    """Plug-in estimate with ``method`` ``"knn"`` (param k) or ``"kde"`` (param h)."""
    if method == "knn":
        est = knn_plugin_sweep(x, y, [int(param)], alpha, g)[0]
    elif method == "kde":
        est = kde_plugin_sweep(x, y, [float(param)], alpha, g)[0]
    else:
        raise EstimatorError(f"unknown plug-in method {method!r}")
    for msg in est.warnings:
        warnings.warn(msg, RuntimeWarning)
    return est

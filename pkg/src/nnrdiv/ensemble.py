"""Weighted ensemble of NNR estimates over several neighbourhood sizes.

Each index value ``l`` maps to ``k(l) = floor(l * sqrt(N))``. The weights are
the minimum-norm solution of ``sum w = 1`` and ``sum w * l**(i/d) = 0`` for
``i = 1..d``, which cancels the leading bias terms of the single-k estimates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np

from .errors import EstimatorError
from .metric_space import PooledIndex, build_index
from .nnr import (DivergenceEstimate, EstimatorConfig, NeighborCounts,
                  estimate_J_alpha, renyi_from_J)

SUM_TOL = 1e-12
MOMENT_TOL = 1e-10
DEFAULT_C = 3.0
WORK_DPS = 80


@dataclass(frozen=True)
class EnsembleWeights:
    ell: np.ndarray
    w: np.ndarray
    sum_residual: float
    moment_residual: float
    rowspace_residual: float
    condition: float

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.w))

    @property
    def constraint_residuals(self) -> tuple[float, float]:
        return self.sum_residual, self.moment_residual


def default_index_set(L: int, d: int, c: float = DEFAULT_C) -> np.ndarray:
    """``L`` evenly spaced values ``c * j / L`` for ``j = 1..L``."""
    if L <= d:
        raise EstimatorError(f"the ensemble needs L > d (got L={L}, d={d})")
    if not c > 0:
        raise EstimatorError("index cap c must be positive")
    return c * np.arange(1, L + 1) / L


def constraint_matrix(ell: np.ndarray, d: int) -> np.ndarray:
    ell = np.asarray(ell, dtype=np.float64)
    rows = [np.ones_like(ell)] + [ell ** (i / d) for i in range(1, d + 1)]
    return np.vstack(rows)


def _residuals(A, w) -> tuple[float, float, float]:
    """Exact residuals of the stored float weights.

    Returns ``|sum w - 1|``, ``max_i |sum w l**(i/d)|`` and the distance of
    ``w`` from rowspace(A), all evaluated at ``WORK_DPS`` digits so that the
    figures describe ``w`` itself rather than rounding in the check.
    """
    with mpmath.workdps(WORK_DPS):
        Am = mpmath.matrix(A.tolist())
        wm = mpmath.matrix(w.tolist())
        r = Am * wm
        lam = mpmath.lu_solve(Am * Am.T, r)
        off = mpmath.norm(wm - Am.T * lam)
        moments = [abs(r[i]) for i in range(1, A.shape[0])]
        return float(abs(r[0] - 1)), float(max(moments, default=0)), float(off)


def solve_weights(ell, d: int, strict: bool = True) -> EnsembleWeights:
    """Minimum-norm weights ``w = A^T (A A^T)^{-1} e_1``.

    The (d+1)x(d+1) Gram system is solved at ``WORK_DPS`` digits and ``w`` is
    rounded to double once, so the result is the correctly rounded optimum.
    With ``strict`` (the default) an :class:`EstimatorError` is raised when
    even that rounding leaves residuals above ``SUM_TOL`` / ``MOMENT_TOL``;
    otherwise the weights are returned with their residuals.
    """
    ell = np.asarray(ell, dtype=np.float64).ravel()
    L = ell.shape[0]
    if d < 1:
        raise EstimatorError("dimension must be at least 1")
    if L <= d:
        raise EstimatorError(f"the ensemble needs L > d (got L={L}, d={d})")
    if np.any(ell <= 0) or np.any(np.diff(ell) <= 0):
        raise EstimatorError("index values must be positive and strictly increasing")

    A = constraint_matrix(ell, d)
    cond = float(np.linalg.cond(A))
    with mpmath.workdps(WORK_DPS):
        Am = mpmath.matrix(A.tolist())
        try:
            lam = mpmath.lu_solve(Am * Am.T, mpmath.matrix([1] + [0] * d))
        except ZeroDivisionError:
            raise EstimatorError(
                f"constraint matrix is rank deficient for index set {ell.tolist()}") from None
        w = np.array([float(v) for v in Am.T * lam])

    sum_res, moment, rowspace = _residuals(A, w)
    if strict and (sum_res > SUM_TOL or moment > MOMENT_TOL or rowspace > MOMENT_TOL):
        raise EstimatorError(
            f"ill-conditioned index set {ell.tolist()} (d={d}, condition {cond:.3g}, "
            f"|w|={np.linalg.norm(w):.3g}): residuals {sum_res:.2g}/{moment:.2g}/"
            f"{rowspace:.2g} exceed what double precision can represent")
    return EnsembleWeights(ell, w, sum_res, moment, rowspace, cond)


def k_values(ell, n: int) -> np.ndarray:
    return np.floor(np.asarray(ell, dtype=np.float64) * math.sqrt(n)).astype(np.int64)


def _raw_subestimate(counts: NeighborCounts, config: EstimatorConfig) -> float:
    if config.renyi:
        return renyi_from_J(estimate_J_alpha(counts, config.alpha), config.alpha)
    return math.fsum(config.g(counts.eta * counts.ratios)) / counts.m


def ensemble_from_positions(positions: np.ndarray, n: int, ks, w,
                            config: EstimatorConfig) -> DivergenceEstimate:
    """Combine sub-estimates read off one neighbour table by prefix truncation."""
    components = []
    for k in ks:
        counts = NeighborCounts.from_positions(positions, n, int(k))
        components.append((int(k), _raw_subestimate(counts, config)))
    raws = np.array([c[1] for c in components])
    if not np.all(np.isfinite(raws)):
        raise EstimatorError("a sub-estimate diverged; the ensemble is undefined")
    raw = math.fsum(np.asarray(w) * raws)
    eta = (positions.shape[0]) / n
    return DivergenceEstimate(max(raw, 0.0), raw, eta, int(max(ks)), components=components)


def ensemble_estimate(x, y, ell, weights: EnsembleWeights | np.ndarray,
                      config: EstimatorConfig, index: PooledIndex | None = None
                      ) -> DivergenceEstimate:
    """``max(sum_l w(l) * D_raw[k(l)], 0)`` from a single pooled k-NN pass."""
    if index is None:
        index = build_index(x, y, config.metric)
    w = weights.w if isinstance(weights, EnsembleWeights) else np.asarray(weights, float)
    ell = np.asarray(ell, dtype=np.float64).ravel()
    if w.shape[0] != ell.shape[0]:
        raise EstimatorError("one weight per index value is required")
    ks = k_values(ell, index.n)
    if np.any(ks < 1):
        raise EstimatorError(f"k(l) < 1 for index set {ell.tolist()} with N={index.n}")
    if np.any(ks > index.size - 1):
        raise EstimatorError(f"k(l) exceeds N+M-1={index.size - 1}: {ks.tolist()}")
    if np.unique(ks).shape[0] != ks.shape[0]:
        raise EstimatorError(f"duplicate k(l) values {ks.tolist()}; use a wider index set")
    _, pos = index.query_y(int(ks.max()))
    return ensemble_from_positions(pos, index.n, ks, w, config)


def ensemble_divergence(x, y, config: EstimatorConfig, L: int | None = None,
                        c: float = DEFAULT_C) -> DivergenceEstimate:
    """Ensemble estimate with the default index set (``L = d + 2`` unless given)."""
    index = build_index(x, y, config.metric)
    L = index.dim + 2 if L is None else L
    ell = default_index_set(L, index.dim, c)
    return ensemble_estimate(x, y, ell, solve_weights(ell, index.dim), config, index)

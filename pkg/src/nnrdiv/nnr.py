"""Nearest-neighbour-ratio (NNR) divergence estimators.

For every Y point the k nearest pooled neighbours (itself excluded) are split
into ``n_i`` X points and ``m_i`` Y points; ``eta * n_i / (m_i + 1)`` with
``eta = M / N`` estimates the density ratio f1/f2 at that point.

All estimates are in nats. Per-point terms are reduced with ``math.fsum`` so
the result does not depend on the order of the samples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import xlogy

from .errors import EstimatorError
from .metric_space import Metric, PooledIndex, build_index


@dataclass(frozen=True)
class GFunction:
    """Generator of an f-divergence, ``D_g = E_f2[g(f1/f2)]``.

    ``at_zero`` is the continuous extension at t = 0 and ``recession`` is
    ``lim g(t)/t`` as t grows, used by the quadrature oracle where f2 vanishes.
    """

    name: str
    func: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    at_zero: float | None = None
    recession: float | None = None

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0):
            raise EstimatorError(f"g is defined for t >= 0 only ({self.name})")
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.asarray(self.func(t), dtype=np.float64)
        if self.at_zero is not None:
            out = np.where(t == 0.0, self.at_zero, out)
        if not np.all(np.isfinite(out)):
            raise EstimatorError(f"g={self.name} is undefined at some ratio")
        return out

    @classmethod
    def kl(cls) -> GFunction:
        return cls("kl", lambda t: xlogy(t, t), 0.0, math.inf)

    @classmethod
    def total_variation(cls) -> GFunction:
        return cls("tv", lambda t: np.abs(t - 1.0) / 2.0, 0.5, 0.5)

    @classmethod
    def hellinger(cls) -> GFunction:
        return cls("hellinger", lambda t: (np.sqrt(t) - 1.0) ** 2, 1.0, 1.0)

    @classmethod
    def alpha_power(cls, alpha: float) -> GFunction:
        alpha = float(alpha)
        if alpha <= 0:
            raise EstimatorError("alpha must be positive")
        rec = math.inf if alpha > 1 else (1.0 if alpha == 1 else 0.0)
        return cls(f"alpha:{alpha:g}", lambda t: np.power(t, alpha), 0.0, rec)

    @classmethod
    def custom(cls, func, name="custom") -> GFunction:
        return cls(name, func)

    @classmethod
    def parse(cls, spec: str) -> GFunction:
        """Parse ``kl``, ``tv``, ``hellinger`` or ``alpha:<a>``."""
        s = spec.strip().lower()
        if s == "kl":
            return cls.kl()
        if s in ("tv", "total_variation"):
            return cls.total_variation()
        if s == "hellinger":
            return cls.hellinger()
        if s.startswith("alpha:"):
            try:
                a = float(s.split(":", 1)[1])
            except ValueError:
                raise EstimatorError(f"bad alpha in g spec {spec!r}") from None
            return cls.alpha_power(a)
        raise EstimatorError(f"unknown g function {spec!r}")


def g_eval(g: GFunction, t) -> np.ndarray | float:
    out = g(t)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class EstimatorConfig:
    """Estimator settings; set exactly one of ``alpha`` (Rényi) or ``g``.

    ``k=None`` picks k from :func:`k_opt_heuristic` when the sample is known.
    """

    k: int | None = None
    alpha: float | None = None
    g: GFunction | None = None
    bounds: tuple[float, float] | None = None
    gamma: float = 1.0
    metric: Metric = field(default_factory=Metric.euclidean)

    def __post_init__(self):
        if (self.alpha is None) == (self.g is None):
            raise EstimatorError("set exactly one of alpha (Renyi) or g (f-divergence)")
        if self.alpha is not None:
            if not self.alpha > 0:
                raise EstimatorError("alpha must be positive")
            if self.alpha == 1:
                raise EstimatorError("alpha must differ from 1")
        if self.bounds is not None:
            cl, cu = self.bounds
            if not 0 < cl <= cu:
                raise EstimatorError("density bounds need 0 < C_L <= C_U")
        if not 0 < self.gamma <= 1:
            raise EstimatorError("Holder exponent gamma must lie in (0, 1]")
        if self.k is not None and (not isinstance(self.k, (int, np.integer)) or self.k < 1):
            raise EstimatorError(f"k must be a positive integer, got {self.k!r}")

    @property
    def renyi(self) -> bool:
        return self.alpha is not None

    def resolve_k(self, n: int, d: int) -> int:
        return int(self.k) if self.k is not None else k_opt_heuristic(n, d, self.gamma)

    def renyi_upper(self) -> float:
        cl, cu = self.bounds
        return math.log(cu / cl) / abs(1.0 - self.alpha)


@dataclass(frozen=True)
class NeighborCounts:
    """Per-Y-point label counts among its k nearest pooled neighbours."""

    n_counts: np.ndarray
    m_counts: np.ndarray
    k: int
    n: int

    @property
    def m(self) -> int:
        return int(self.n_counts.shape[0])

    @property
    def eta(self) -> float:
        return self.m / self.n

    @property
    def ratios(self) -> np.ndarray:
        return self.n_counts / (self.m_counts + 1.0)

    @classmethod
    def from_pairs(cls, pairs, n: int) -> NeighborCounts:
        arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        ks = arr.sum(axis=1)
        if arr.shape[0] == 0 or np.any(ks != ks[0]) or np.any(arr < 0):
            raise EstimatorError("count pairs must be non-negative and share one k")
        return cls(arr[:, 0], arr[:, 1], int(ks[0]), int(n))

    @classmethod
    def from_positions(cls, positions: np.ndarray, n: int, k: int | None = None):
        """Counts from neighbour positions; only the first ``k`` columns are used."""
        k = positions.shape[1] if k is None else k
        n_counts = (positions[:, :k] < n).sum(axis=1)
        return cls(n_counts, k - n_counts, int(k), int(n))


@dataclass
class DivergenceEstimate:
    value: float
    raw_value: float
    eta: float
    k: int | None = None
    per_point_terms: np.ndarray | None = None
    warnings: list[str] = field(default_factory=list)
    components: list[tuple[int, float]] | None = None


def k_opt_heuristic(n: int, d: int, gamma: float = 1.0) -> int:
    """``max(1, round(N ** (gamma / (d + gamma))))``, halves rounded up."""
    if n < 2 or d < 1 or not 0 < gamma <= 1:
        raise EstimatorError("k heuristic needs N >= 2, d >= 1 and 0 < gamma <= 1")
    return max(1, math.floor(n ** (gamma / (d + gamma)) + 0.5))


def nnr_counts(index: PooledIndex, k: int) -> NeighborCounts:
    _, pos = index.query_y(k)
    return NeighborCounts.from_positions(pos, index.n)


def _check_counts(counts: NeighborCounts):
    if counts.n < 1 or counts.m < 1:
        raise EstimatorError("both samples need at least one point")


def _renyi_terms(counts, alpha):
    return np.power(counts.ratios, alpha)


def estimate_J_alpha(counts: NeighborCounts, alpha: float, n: int | None = None,
                     m: int | None = None) -> float:
    """``eta**alpha / M * sum_i (n_i / (m_i + 1))**alpha``."""
    if not alpha > 0 or alpha == 1:
        raise EstimatorError("alpha must be positive and differ from 1")
    n = counts.n if n is None else n
    m = counts.m if m is None else m
    if n < 1 or m < 1:
        raise EstimatorError("both samples need at least one point")
    eta = m / n
    return eta ** alpha / m * math.fsum(_renyi_terms(counts, alpha))


def renyi_from_J(J: float, alpha: float) -> float:
    if J == 0.0:
        return -math.inf if alpha > 1 else math.inf
    return math.log(J) / (alpha - 1.0)


def clamp_renyi(raw: float, alpha: float, bounds=None) -> float:
    """Lower clamp at 0 and, with density bounds ``(C_L, C_U)``, upper clamp at
    ``ln(C_U / C_L) / |1 - alpha|``."""
    value = max(raw, 0.0)
    if bounds is not None:
        cl, cu = bounds
        value = min(value, math.log(cu / cl) / abs(1.0 - alpha))
    return value


def estimate_renyi(counts: NeighborCounts, config: EstimatorConfig,
                   keep_terms: bool = False) -> DivergenceEstimate:
    if not config.renyi:
        raise EstimatorError("configuration is not in Renyi mode")
    _check_counts(counts)
    J = estimate_J_alpha(counts, config.alpha)
    raw = renyi_from_J(J, config.alpha)
    if raw == math.inf and config.bounds is None:
        raise EstimatorError(
            "J_alpha is 0 with alpha < 1: the estimate diverges (no X point among any "
            "neighbourhood; increase k or check the samples)")
    value = clamp_renyi(raw, config.alpha, config.bounds)
    terms = _renyi_terms(counts, config.alpha) if keep_terms else None
    return DivergenceEstimate(value, raw, counts.eta, counts.k, terms)


def estimate_f_divergence(counts: NeighborCounts, config: EstimatorConfig,
                          keep_terms: bool = False) -> DivergenceEstimate:
    if config.g is None:
        raise EstimatorError("configuration is not in f-divergence mode")
    _check_counts(counts)
    terms = config.g(counts.eta * counts.ratios)
    raw = math.fsum(terms) / counts.m
    if config.bounds is not None:
        cl, cu = config.bounds
        floor = float(config.g(cl / cu))
        terms = np.maximum(terms, floor)
    value = max(math.fsum(terms) / counts.m, 0.0)
    return DivergenceEstimate(value, raw, counts.eta, counts.k, terms if keep_terms else None)


def estimate_from_counts(counts: NeighborCounts, config: EstimatorConfig) -> DivergenceEstimate:
    if config.renyi:
        return estimate_renyi(counts, config)
    return estimate_f_divergence(counts, config)


def nnr_estimate(x, y, config: EstimatorConfig, index: PooledIndex | None = None
                 ) -> DivergenceEstimate:
    """Build the pooled index (unless given) and run the configured estimator."""
    if index is None:
        index = build_index(x, y, config.metric)
    k = config.resolve_k(index.n, index.dim)
    return estimate_from_counts(nnr_counts(index, k), config)

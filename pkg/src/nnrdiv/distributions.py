"""Synthetic distributions and ground-truth divergence oracles.

Divergences are always ``D(f1 || f2)`` with X ~ f1 and Y ~ f2, in nats.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from scipy.stats import multivariate_normal

from .errors import EstimatorError
from .nnr import GFunction

GAUSSIAN = "gaussian"
TRUNCATED = "truncated_gaussian"
UNIFORM = "uniform"
KINDS = (GAUSSIAN, TRUNCATED, UNIFORM)

MIN_ACCEPTANCE = 1e-4
CONVERGENCE_TOL = 1e-4
GAUSSIAN_REACH = 12.0  # half-width of the default quadrature box, in std devs


def make_rng(seed, *keys) -> np.random.Generator:
    """Generator for the stream identified by ``(seed, *keys)``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


@dataclass(eq=False)
class DistributionSpec:
    kind: str
    mean: np.ndarray | None = None
    cov: np.ndarray | None = None
    box: np.ndarray | None = None  # shape (d, 2): per-axis [lo, hi]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise EstimatorError(f"unknown distribution kind {self.kind!r}")
        if self.kind != UNIFORM:
            self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
            d = self.mean.shape[0]
            cov = np.asarray(self.cov, dtype=np.float64)
            if cov.ndim == 0:
                cov = cov * np.eye(d)
            elif cov.ndim == 1:
                cov = np.diag(cov)
            if cov.shape != (d, d) or not np.allclose(cov, cov.T):
                raise EstimatorError("covariance must be a symmetric d x d matrix")
            try:
                self._chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise EstimatorError("covariance is not positive definite") from None
            self.cov = cov
        if self.kind != GAUSSIAN:
            box = np.asarray(self.box, dtype=np.float64).reshape(-1, 2)
            if np.any(box[:, 1] <= box[:, 0]):
                raise EstimatorError("box must satisfy lo < hi on every axis")
            if self.kind == TRUNCATED and box.shape[0] != self.dim:
                raise EstimatorError("box dimension does not match the mean")
            self.box = box
        self._mass = None

    # constructors -------------------------------------------------------
    @classmethod
    def gaussian(cls, mean, cov) -> DistributionSpec:
        return cls(GAUSSIAN, mean, cov)

    @classmethod
    def truncated_gaussian(cls, mean, cov, box) -> DistributionSpec:
        return cls(TRUNCATED, mean, cov, box)

    @classmethod
    def uniform(cls, box) -> DistributionSpec:
        return cls(UNIFORM, box=box)

    @classmethod
    def from_dict(cls, data: dict, dim: int | None = None) -> DistributionSpec:
        """Build from the JSON form; scalar fields broadcast to ``dim`` axes.

        Keys: ``kind``, ``mu``, ``sigma2`` (scalar or diagonal) or ``cov``
        (matrix), ``box`` (``[lo, hi]`` for every axis or one pair per axis).
        """
        kind = data.get("kind")
        if kind not in KINDS:
            raise EstimatorError(f"unknown distribution kind {kind!r}")
        d = dim if dim is not None else data.get("dim")
        box = None
        if "box" in data:
            box = np.asarray(data["box"], dtype=np.float64)
            if box.ndim == 1:
                if d is None:
                    raise EstimatorError("a single [lo, hi] box needs dim")
                box = np.tile(box, (int(d), 1))
            d = box.shape[0] if d is None else d
        if kind == UNIFORM:
            if box is None:
                raise EstimatorError("uniform distribution needs a box")
            return cls.uniform(box)
        mu = np.asarray(data.get("mu", 0.0), dtype=np.float64)
        if mu.ndim == 0:
            if d is None:
                raise EstimatorError("scalar mu needs dim")
            mu = np.full(int(d), float(mu))
        d = mu.shape[0]
        if "cov" in data:
            cov = np.asarray(data["cov"], dtype=np.float64)
        else:
            s2 = np.asarray(data.get("sigma2", 1.0), dtype=np.float64)
            cov = np.diag(np.broadcast_to(s2, (d,)).astype(float))
        if kind == GAUSSIAN:
            return cls.gaussian(mu, cov)
        if box is None:
            raise EstimatorError("truncated gaussian needs a box")
        return cls.truncated_gaussian(mu, cov, box)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind != UNIFORM:
            out["mu"] = self.mean.tolist()
            out["cov"] = self.cov.tolist()
        if self.kind != GAUSSIAN:
            out["box"] = self.box.tolist()
        return out

    # properties ---------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.box.shape[0] if self.kind == UNIFORM else self.mean.shape[0]

    @property
    def bounded(self) -> bool:
        return self.kind != GAUSSIAN

    @property
    def diagonal(self) -> bool:
        return self.cov is not None and np.count_nonzero(self.cov - np.diag(np.diag(self.cov))) == 0

    def support_box(self) -> np.ndarray:
        if self.bounded:
            return self.box
        half = GAUSSIAN_REACH * np.sqrt(np.diag(self.cov))
        return np.stack([self.mean - half, self.mean + half], axis=1)

    def box_mass(self) -> float:
        """Probability of the parent Gaussian inside the truncation box."""
        if self.kind != TRUNCATED:
            return 1.0
        if self._mass is None:
            self._mass = _gaussian_box_mass(self)
        return self._mass


def _gaussian_logpdf(spec, pts):
    z = np.linalg.solve(spec._chol, (pts - spec.mean).T)
    logdet = 2.0 * np.sum(np.log(np.diag(spec._chol)))
    return -0.5 * (np.sum(z * z, axis=0) + spec.dim * math.log(2 * math.pi) + logdet)


def _in_box(box, pts):
    return np.all((pts >= box[:, 0]) & (pts <= box[:, 1]), axis=1)


def _gaussian_box_mass(spec):
    lo = (spec.box[:, 0] - spec.mean)
    hi = (spec.box[:, 1] - spec.mean)
    if spec.diagonal:
        sd = np.sqrt(np.diag(spec.cov))
        return float(np.prod(ndtr(hi / sd) - ndtr(lo / sd)))
    if spec.dim <= 3:
        parent = DistributionSpec.gaussian(spec.mean, spec.cov)
        axes = [_simpson_axis(spec.box[j], [], 256 if spec.dim <= 2 else 128)
                for j in range(spec.dim)]
        return float(_tensor_integrate(axes, lambda pts: pdf(parent, pts)))
    return float(multivariate_normal(np.zeros(spec.dim), spec.cov).cdf(hi, lower_limit=lo))


def pdf(spec: DistributionSpec, points):
    """Exact density at one point (returns float) or at each row (array)."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != spec.dim:
        raise EstimatorError("point dimension does not match the distribution")
    if spec.kind == UNIFORM:
        vol = float(np.prod(spec.box[:, 1] - spec.box[:, 0]))
        out = np.where(_in_box(spec.box, pts), 1.0 / vol, 0.0)
    else:
        out = np.exp(_gaussian_logpdf(spec, pts))
        if spec.kind == TRUNCATED:
            out = np.where(_in_box(spec.box, pts), out / spec.box_mass(), 0.0)
    return float(out[0]) if single else out


def sample(spec: DistributionSpec, n: int, seed=0) -> np.ndarray:
    """``n`` i.i.d. draws; identical (spec, n, seed) give identical output."""
    if n < 1:
        raise EstimatorError("sample size must be at least 1")
    rng = make_rng(seed)
    d = spec.dim
    if spec.kind == UNIFORM:
        lo, hi = spec.box[:, 0], spec.box[:, 1]
        return lo + (hi - lo) * rng.random((n, d))
    if spec.kind == GAUSSIAN:
        return spec.mean + rng.standard_normal((n, d)) @ spec._chol.T
    rate = spec.box_mass()
    if rate < MIN_ACCEPTANCE:
        raise EstimatorError(f"truncation box too improbable (acceptance {rate:.2g})")
    out = np.empty((0, d))
    while out.shape[0] < n:
        need = n - out.shape[0]
        batch = int(math.ceil(1.2 * need / rate)) + 16
        draw = spec.mean + rng.standard_normal((batch, d)) @ spec._chol.T
        out = np.concatenate([out, draw[_in_box(spec.box, draw)]])
    return out[:n]


@dataclass(frozen=True)
class OracleValue:
    divergence: str
    value: float
    method: str
    resolution: int | None = None
    delta: float | None = None


def _divergence_name(alpha, g):
    return f"renyi:{alpha:g}" if alpha is not None else f"f:{g.name}"


def renyi_gaussian_closed_form(spec1: DistributionSpec, spec2: DistributionSpec,
                               alpha: float) -> OracleValue:
    """Rényi divergence of order ``alpha`` between two untruncated Gaussians."""
    if spec1.kind != GAUSSIAN or spec2.kind != GAUSSIAN:
        raise EstimatorError("closed form needs two untruncated Gaussians")
    if not alpha > 0 or alpha == 1:
        raise EstimatorError("alpha must be positive and differ from 1")
    s_a = (1.0 - alpha) * spec1.cov + alpha * spec2.cov
    sign, logdet_a = np.linalg.slogdet(s_a)
    if sign <= 0 or np.any(np.linalg.eigvalsh(s_a) <= 0):
        raise EstimatorError("(1-alpha)*cov1 + alpha*cov2 is not positive definite")
    _, ld1 = np.linalg.slogdet(spec1.cov)
    _, ld2 = np.linalg.slogdet(spec2.cov)
    dmu = spec2.mean - spec1.mean
    quad = float(dmu @ np.linalg.solve(s_a, dmu))
    value = 0.5 * alpha * quad - (logdet_a - (1 - alpha) * ld1 - alpha * ld2) / (2 * (alpha - 1))
    return OracleValue(_divergence_name(alpha, None), float(value), "closed-form")


def kl_gaussian_closed_form(spec1: DistributionSpec, spec2: DistributionSpec) -> OracleValue:
    if spec1.kind != GAUSSIAN or spec2.kind != GAUSSIAN:
        raise EstimatorError("closed form needs two untruncated Gaussians")
    d = spec1.dim
    inv2 = np.linalg.inv(spec2.cov)
    dmu = spec2.mean - spec1.mean
    _, ld1 = np.linalg.slogdet(spec1.cov)
    _, ld2 = np.linalg.slogdet(spec2.cov)
    value = 0.5 * (np.trace(inv2 @ spec1.cov) + dmu @ inv2 @ dmu - d + ld2 - ld1)
    return OracleValue("f:kl", float(value), "closed-form")


# quadrature -----------------------------------------------------------------

def _simpson_axis(interval, breaks, resolution):
    """Composite Simpson nodes/weights on ``interval`` split at ``breaks``.

    Nodes at piece ends are nudged inwards so each piece sees the one-sided
    limit of a density that jumps at the break.
    """
    a, b = float(interval[0]), float(interval[1])
    edges = np.unique(np.concatenate([[a, b], [t for t in breaks if a < t < b]]))
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        n = max(2, int(math.ceil(resolution * (hi - lo) / (b - a))))
        n += n % 2
        x = np.linspace(lo, hi, n + 1)
        nudge = 1e-12 * (hi - lo)
        x[0] += nudge
        x[-1] -= nudge
        w = np.ones(n + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        nodes.append(x)
        weights.append(w * (hi - lo) / (3.0 * n))
    return np.concatenate(nodes), np.concatenate(weights)


def _tensor_integrate(axes, integrand):
    """Integrate ``integrand(points)`` over a tensor Simpson grid.

    The integrand returns one value per point, or a row of values per point,
    in which case one integral per column comes back as an array.
    """
    first_x, first_w = axes[0]
    rest = axes[1:]
    if rest:
        grids = np.meshgrid(*[ax[0] for ax in rest], indexing="ij")
        rest_pts = np.stack([g.ravel() for g in grids], axis=1)
        wg = np.meshgrid(*[ax[1] for ax in rest], indexing="ij")
        rest_w = np.prod(np.stack([g.ravel() for g in wg], axis=1), axis=1)
    else:
        rest_pts = np.empty((1, 0))
        rest_w = np.ones(1)
    total = []
    scalar = True
    for x0, w0 in zip(first_x, first_w):
        pts = np.column_stack([np.full(rest_pts.shape[0], x0), rest_pts])
        vals = integrand(pts)
        scalar = vals.ndim == 1
        total.append(w0 * np.atleast_1d(rest_w @ vals))
    sums = np.array([math.fsum(col) for col in zip(*total)])
    return float(sums[0]) if scalar else sums


def _integrand(spec1, spec2, alpha, g):
    def f(pts):
        p1 = pdf(spec1, pts)
        p2 = pdf(spec2, pts)
        out = np.zeros_like(p1)
        both = p2 > 0
        if alpha is not None:
            with np.errstate(divide="ignore"):
                out[both] = p1[both] ** alpha * p2[both] ** (1.0 - alpha)
            only1 = (~both) & (p1 > 0)
            if alpha > 1 and np.any(only1):
                out[only1] = np.inf
            # grid masses ride along so the caller can normalise
            return np.column_stack([out, p1, p2])
        out[both] = p2[both] * g(p1[both] / p2[both])
        only1 = (~both) & (p1 > 0)
        if np.any(only1):
            rec = g.recession
            if rec is None:
                raise EstimatorError("custom g needs a recession value where f2 vanishes")
            out[only1] = np.inf if math.isinf(rec) else p1[only1] * rec
        return out
    return f


def _quadrature_box(spec1, spec2, box):
    if box is not None:
        box = np.asarray(box, dtype=np.float64).reshape(-1, 2)
        if box.shape[0] == 1 and spec1.dim > 1:
            box = np.tile(box, (spec1.dim, 1))
        return box
    b1, b2 = spec1.support_box(), spec2.support_box()
    return np.stack([np.minimum(b1[:, 0], b2[:, 0]), np.maximum(b1[:, 1], b2[:, 1])], axis=1)


def _quadrature_once(spec1, spec2, alpha, g, box, resolution):
    d = spec1.dim
    breaks = [[] for _ in range(d)]
    for s in (spec1, spec2):
        if s.bounded:
            for j in range(d):
                breaks[j].extend(s.box[j].tolist())
    axes = [_simpson_axis(box[j], breaks[j], resolution) for j in range(d)]
    integral = _tensor_integrate(axes, _integrand(spec1, spec2, alpha, g))
    if alpha is not None:
        # dividing by the grid masses cancels the quadrature error in the
        # normalisation, so D(f || f) is 0 to rounding
        integral, m1, m2 = integral
        if integral <= 0:
            return math.inf if alpha < 1 else 0.0
        if math.isinf(integral):
            return math.inf
        return (math.log(integral) - alpha * math.log(m1)
                - (1.0 - alpha) * math.log(m2)) / (alpha - 1.0)
    return integral


def quadrature_divergence(spec1: DistributionSpec, spec2: DistributionSpec, alpha=None,
                          g: GFunction | str | None = None, box=None, resolution: int = 64,
                          max_resolution: int | None = None) -> OracleValue:
    """Tensor-grid Simpson value of ``D(f1 || f2)``; doubles resolution until stable.

    Infinite divergences (f1 not absolutely continuous w.r.t. f2 where it
    matters) come back as ``inf`` without a convergence check.
    """
    if isinstance(g, str):
        g = GFunction.parse(g)
    if (alpha is None) == (g is None):
        raise EstimatorError("set exactly one of alpha or g")
    if spec1.dim != spec2.dim:
        raise EstimatorError("distributions have different dimensions")
    d = spec1.dim
    if d > 3:
        raise EstimatorError("tensor quadrature is limited to d <= 3")
    if resolution < 32:
        raise EstimatorError("quadrature resolution must be at least 32 per axis")
    if max_resolution is None:
        max_resolution = 1024 if d <= 2 else 256
    box = _quadrature_box(spec1, spec2, box)
    name = _divergence_name(alpha, g)
    res = int(resolution)
    prev = _quadrature_once(spec1, spec2, alpha, g, box, res)
    while True:
        if math.isinf(prev):
            return OracleValue(name, prev, "quadrature", res, 0.0)
        nxt = _quadrature_once(spec1, spec2, alpha, g, box, 2 * res)
        delta = abs(nxt - prev)
        if delta < CONVERGENCE_TOL:
            return OracleValue(name, nxt, "quadrature", 2 * res, delta)
        res *= 2
        if 2 * res > max_resolution:
            raise EstimatorError(
                f"quadrature did not converge (delta {delta:.2g} at resolution {res})")
        prev = nxt


def integrate_pdf(spec: DistributionSpec, resolution: int = 256, box=None) -> float:
    """Total mass of ``spec`` on a tensor Simpson grid (d <= 3)."""
    if spec.dim > 3:
        raise EstimatorError("tensor quadrature is limited to d <= 3")
    box = spec.support_box() if box is None else np.asarray(box, float).reshape(-1, 2)
    breaks = [spec.box[j].tolist() if spec.bounded else [] for j in range(spec.dim)]
    axes = [_simpson_axis(box[j], breaks[j], resolution) for j in range(spec.dim)]
    return _tensor_integrate(axes, lambda pts: pdf(spec, pts))


def oracle(spec1: DistributionSpec, spec2: DistributionSpec, alpha=None, g=None,
           box=None, resolution: int = 64) -> OracleValue:
    """Closed form for Gaussian pairs where available, quadrature otherwise."""
    if isinstance(g, str):
        g = GFunction.parse(g)
    gauss = spec1.kind == GAUSSIAN and spec2.kind == GAUSSIAN
    if gauss and alpha is not None:
        return renyi_gaussian_closed_form(spec1, spec2, alpha)
    if gauss and g is not None and g.name == "kl":
        return kl_gaussian_closed_form(spec1, spec2)
    return quadrature_divergence(spec1, spec2, alpha, g, box, resolution)

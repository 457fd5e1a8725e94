"""Monte-Carlo experiment runner.

An experiment is the cross product ``dims x sample sizes x trials``; inside one
task every configured estimator (and every value of its parameter grid) sees
the same pair of samples. Sample streams are keyed by
``(seed, role, d, n, trial)``, so results do not depend on thread count or on
which estimators are enabled.
"""
from __future__ import annotations

import copy
import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import kde_plugin_sweep, knn_plugin_sweep
from .distributions import DistributionSpec, make_rng, oracle, sample
from .ensemble import DEFAULT_C, default_index_set, ensemble_estimate, solve_weights
from .errors import EstimatorError
from .metric_space import build_index
from .nnr import EstimatorConfig, GFunction, NeighborCounts, estimate_from_counts, k_opt_heuristic

ESTIMATORS = ("nnr", "nnr-ensemble", "knn-plugin", "kde-plugin")
SWEEP_AXES = ("n", "k", "d", "estimator")
REQUIRED_PARAMS = {"nnr": "k", "knn-plugin": "k", "kde-plugin": "bandwidth"}
RAW_HEADER = ["group", "trial", "n", "m", "k", "estimator", "estimate", "truth",
              "sq_error", "wall_ms"]
AGG_HEADER = ["group", "n", "k", "estimator", "mean", "bias", "variance", "mse", "std",
              "trials"]


class ConfigError(ValueError):
    """Malformed experiment configuration."""


@dataclass
class ExperimentSpec:
    name: str
    spec1: dict
    spec2: dict
    divergence: dict
    estimators: dict
    n: list
    d: list | None = None
    eta: float = 1.0
    trials: int = 100
    seed: int = 0
    oracle: dict = field(default_factory=dict)
    sweep: dict | None = None
    gamma: float = 1.0

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.estimators:
            raise ConfigError("at least one estimator is required")
        for name in self.estimators:
            if name not in ESTIMATORS:
                raise ConfigError(f"unknown estimator {name!r}")
        kind = self.divergence.get("kind")
        if kind == "renyi":
            a = self.divergence.get("alpha")
            if a is None or not a > 0 or a == 1:
                raise ConfigError("renyi divergence needs alpha > 0, alpha != 1")
        elif kind == "f":
            try:
                GFunction.parse(str(self.divergence.get("g")))
            except EstimatorError as exc:
                raise ConfigError(str(exc)) from None
        else:
            raise ConfigError("divergence kind must be 'renyi' or 'f'")
        if not self.eta > 0:
            raise ConfigError("eta must be positive")
        if self.sweep is not None:
            self._apply_sweep()
        for name, params in self.estimators.items():
            if not isinstance(params, dict):
                raise ConfigError(f"parameters of {name!r} must be an object")
            key = REQUIRED_PARAMS.get(name)
            if key is not None and params.get(key) is None:
                raise ConfigError(f"estimator {name!r} needs parameter {key!r}")
        self.n = [int(v) for v in np.atleast_1d(self.n)]
        _increasing(self.n, "n")
        if self.d is not None:
            self.d = [int(v) for v in np.atleast_1d(self.d)]
            _increasing(self.d, "d")

    def _apply_sweep(self):
        axis = self.sweep.get("axis")
        values = list(self.sweep.get("values", []))
        if axis not in SWEEP_AXES or not values:
            raise ConfigError(f"sweep needs an axis in {SWEEP_AXES} and a value list")
        if axis != "estimator":
            _increasing(values, axis)
        if axis == "n":
            self.n = values
        elif axis == "d":
            self.d = values
        elif axis == "k":
            hits = [e for e in self.estimators if e in ("nnr", "knn-plugin")]
            if not hits:
                raise ConfigError("a k sweep needs an nnr or knn-plugin estimator")
            for e in hits:
                self.estimators[e] = {**self.estimators[e], "k": values}
        else:
            missing = [v for v in values if v not in self.estimators]
            if missing:
                raise ConfigError(f"sweep names unconfigured estimators {missing}")
            self.estimators = {e: self.estimators[e] for e in values}

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentSpec:
        data = copy.deepcopy(data)
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> ExperimentSpec:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    @property
    def alpha(self):
        return self.divergence.get("alpha") if self.divergence["kind"] == "renyi" else None

    @property
    def g(self):
        return GFunction.parse(self.divergence["g"]) if self.divergence["kind"] == "f" else None

    def dims(self) -> list:
        if self.d is not None:
            return self.d
        return [self.distributions(None)[0].dim]

    def distributions(self, d):
        try:
            return (DistributionSpec.from_dict(self.spec1, d),
                    DistributionSpec.from_dict(self.spec2, d))
        except (EstimatorError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad distribution spec: {exc}") from None

    def group_name(self, d) -> str:
        return f"{self.name}/d={d}"

    def m_for(self, n) -> int:
        return max(1, int(round(self.eta * n)))


def _increasing(values, what):
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError(f"{what} values must be strictly increasing")


@dataclass
class TrialRecord:
    group: str
    trial: int
    n: int
    m: int
    k: str
    estimator: str
    estimate: float
    truth: float
    wall_ms: float
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    @property
    def sq_error(self) -> float:
        return (self.estimate - self.truth) ** 2


def _label(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    f = float(value)
    return str(int(f)) if f.is_integer() else repr(f)


def _grid(params, key):
    vals = params.get(key)
    if vals is None:
        raise ConfigError(f"estimator parameter {key!r} is missing")
    return list(vals) if isinstance(vals, (list, tuple)) else [vals]


class _Context:
    """Per-dimension constants shared by every task."""

    def __init__(self, spec: ExperimentSpec, d):
        self.spec = spec
        self.s1, self.s2 = spec.distributions(d)
        self.d = self.s1.dim
        self.group = spec.group_name(self.d)
        o = spec.oracle
        self.truth = oracle(self.s1, self.s2, spec.alpha, spec.g, o.get("box"),
                            int(o.get("resolution", 64))).value
        self.weights = {}

    def config(self, k, bounds=None):
        b = tuple(bounds) if bounds is not None else None
        if self.spec.alpha is not None:
            return EstimatorConfig(k=k, alpha=self.spec.alpha, bounds=b, gamma=self.spec.gamma)
        return EstimatorConfig(k=k, g=self.spec.g, bounds=b, gamma=self.spec.gamma)


def _run_nnr(ctx, params, x, y):
    n, m = x.shape[0], y.shape[0]
    ks, labels = [], []
    for k in _grid(params, "k"):
        if k == "auto":
            k = k_opt_heuristic(n, ctx.d, ctx.spec.gamma)
            labels.append(f"auto={k}")  # distinct from an explicit k of the same value
        else:
            k = int(k)
            labels.append(_label(k))
        ks.append(k)
    t0 = time.perf_counter()
    valid = [k for k in ks if 1 <= k <= n + m - 1]
    pos = None
    if valid:
        _, pos = build_index(x, y).query_y(max(valid))
    shared = time.perf_counter() - t0
    out = []
    for k, label in zip(ks, labels):
        t1 = time.perf_counter()
        if k not in valid:
            out.append((label, None, f"k={k} outside [1, N+M-1]", 0.0))
            continue
        try:
            counts = NeighborCounts.from_positions(pos, n, k)
            est = estimate_from_counts(counts, ctx.config(k, params.get("bounds"))).value
            out.append((label, est, None, shared + time.perf_counter() - t1))
        except EstimatorError as exc:
            out.append((label, None, str(exc), 0.0))
    return out


def _run_ensemble(ctx, params, x, y):
    L = int(params.get("L", ctx.d + 2))
    c = float(params.get("c", DEFAULT_C))
    label = f"L={L};c={_label(c)}"
    t0 = time.perf_counter()
    try:
        key = (L, c)
        if key not in ctx.weights:
            ell = default_index_set(L, ctx.d, c)
            ctx.weights[key] = (ell, solve_weights(ell, ctx.d))
        ell, w = ctx.weights[key]
        est = ensemble_estimate(x, y, ell, w, ctx.config(None)).value
    except EstimatorError as exc:
        return [(label, None, str(exc), 0.0)]
    return [(label, est, None, time.perf_counter() - t0)]


def _run_plugin(ctx, params, x, y, method):
    key = "k" if method == "knn" else "bandwidth"
    grid = _grid(params, key)
    t0 = time.perf_counter()
    try:
        if method == "knn":
            ests = knn_plugin_sweep(x, y, [int(v) for v in grid], ctx.spec.alpha, ctx.spec.g)
        else:
            ests = kde_plugin_sweep(x, y, [float(v) for v in grid], ctx.spec.alpha, ctx.spec.g)
    except EstimatorError as exc:
        return [(_label(v), None, str(exc), 0.0) for v in grid]
    per = (time.perf_counter() - t0) / len(grid)
    out = []
    for v, e in zip(grid, ests):
        if math.isfinite(e.value):
            out.append((_label(v), e.value, None, per))
        else:
            out.append((_label(v), None, "non-finite plug-in estimate", per))
    return out


def _run_task(ctx: _Context, n: int, trial: int) -> list[TrialRecord]:
    spec = ctx.spec
    m = spec.m_for(n)
    rows = []
    try:
        x = sample(ctx.s1, n, make_rng(spec.seed, 0, ctx.d, n, trial))
        y = sample(ctx.s2, m, make_rng(spec.seed, 1, ctx.d, n, trial))
    except EstimatorError as exc:
        return [TrialRecord(ctx.group, trial, n, m, "", e, math.nan, ctx.truth, 0.0, str(exc))
                for e in spec.estimators]
    for name, params in spec.estimators.items():
        if name == "nnr":
            res = _run_nnr(ctx, params, x, y)
        elif name == "nnr-ensemble":
            res = _run_ensemble(ctx, params, x, y)
        elif name == "knn-plugin":
            res = _run_plugin(ctx, params, x, y, "knn")
        else:
            res = _run_plugin(ctx, params, x, y, "kde")
        for label, est, err, secs in res:
            rows.append(TrialRecord(ctx.group, trial, n, m, label, name,
                                    math.nan if est is None else float(est),
                                    ctx.truth, 1000.0 * secs, err))
    return rows


def run_trials(spec: ExperimentSpec, threads: int = 1) -> list[TrialRecord]:
    """Every (dimension, N, trial) task; output order follows the ExperimentSpec grids."""
    contexts = [_Context(spec, d) for d in spec.dims()]
    tasks = [(ctx, n, t) for ctx in contexts for n in spec.n for t in range(spec.trials)]
    if threads <= 1:
        chunks = [_run_task(*task) for task in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(lambda task: _run_task(*task), tasks))
    return [r for chunk in chunks for r in chunk]


@dataclass
class SummaryRow:
    group: str
    n: int
    k: str
    estimator: str
    mean: float
    bias: float
    variance: float
    mse: float
    std: float
    trials: int
    variance_direct: float


def _param_key(label):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


def summarize(records) -> list[SummaryRow]:
    """Mean, bias, variance, MSE and std per (group, n, k, estimator).

    Failed rows are skipped; ``variance`` is ``MSE - bias**2`` and
    ``variance_direct`` the population variance of the estimates.
    """
    groups = {}
    for r in records:
        if r.failed:
            continue
        groups.setdefault((r.group, r.n, r.k, r.estimator), []).append(r)
    rows = []
    for key in sorted(groups, key=lambda g: (g[0], g[1], g[3], _param_key(g[2]))):
        recs = groups[key]
        est = np.array([r.estimate for r in recs])
        truth = recs[0].truth
        mean = math.fsum(est) / est.shape[0]
        bias = mean - truth
        mse = math.fsum((est - truth) ** 2) / est.shape[0]
        direct = math.fsum((est - mean) ** 2) / est.shape[0]
        var = mse - bias * bias
        rows.append(SummaryRow(key[0], key[1], key[2], key[3], mean, bias, var, mse,
                               math.sqrt(max(direct, 0.0)), est.shape[0], direct))
    return rows


def sweep_argmin_k(rows) -> dict:
    """Parameter with the smallest MSE per (group, n, estimator); ties go to the smaller."""
    if rows and isinstance(rows[0], TrialRecord):
        rows = summarize(rows)
    best = {}
    for r in rows:
        try:
            param = float(r.k)
        except ValueError:
            continue
        key = (r.group, r.n, r.estimator)
        cur = best.get(key)
        if cur is None or r.mse < cur[1] or (r.mse == cur[1] and param < cur[0]):
            best[key] = (param, r.mse)
    return {key: (int(p) if p.is_integer() else p) for key, (p, _) in best.items()}


def _fmt(x) -> str:
    if isinstance(x, float):
        if math.isnan(x):
            return ""
        return repr(x)
    return str(x)


def write_raw_csv(records, path, timing: bool = False):
    """Raw rows; ``wall_ms`` is left blank unless ``timing`` (keeps reruns byte-identical)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RAW_HEADER)
        for r in records:
            est = math.nan if r.failed else r.estimate
            sq = math.nan if r.failed else r.sq_error
            w.writerow([r.group, r.trial, r.n, r.m, r.k, r.estimator, _fmt(est),
                        _fmt(r.truth), _fmt(sq), _fmt(r.wall_ms) if timing else ""])


def write_summary_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGG_HEADER)
        for r in rows:
            w.writerow([r.group, r.n, r.k, r.estimator, _fmt(r.mean), _fmt(r.bias),
                        _fmt(r.variance), _fmt(r.mse), _fmt(r.std), r.trials])


def run_experiment(spec: ExperimentSpec, out_dir, threads: int = 1, timing: bool = False,
                   svg: bool = False):
    """Run, then write ``<name>_raw.csv`` and ``<name>_agg.csv`` (and an SVG)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = run_trials(spec, threads)
    rows = summarize(records)
    paths = [out / f"{spec.name}_raw.csv", out / f"{spec.name}_agg.csv"]
    write_raw_csv(records, paths[0], timing)
    write_summary_csv(rows, paths[1])
    if svg:
        from .plotting import plot_summary
        paths.append(plot_summary(rows, spec, out / f"{spec.name}.svg"))
    return records, rows, paths

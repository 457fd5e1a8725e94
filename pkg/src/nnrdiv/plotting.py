"""SVG charts of aggregated benchmark results (needs matplotlib)."""
from __future__ import annotations

import matplotlib

matplotlib.use("svg")
import matplotlib.pyplot as plt  # noqa: E402

MAX_LINES_PER_ESTIMATOR = 6


def _series(rows, by_k):
    series = {}
    for r in rows:
        try:
            param = float(r.k)
        except ValueError:
            param = None
        if by_k:
            if param is None:
                continue
            series.setdefault((r.group, r.estimator, f"N={r.n}"), []).append((param, r.mse))
        else:
            series.setdefault((r.group, r.estimator, r.k), []).append((r.n, r.mse))
    return series


def _tuned(rows):
    """Best MSE over each estimator's parameter grid, per sample size."""
    best = {}
    for r in rows:
        key = (r.group, r.estimator, "tuned", r.n)
        if key not in best or r.mse < best[key]:
            best[key] = r.mse
    series = {}
    for (group, est, tag, n), mse in sorted(best.items()):
        series.setdefault((group, est, tag), []).append((n, mse))
    return series


def plot_summary(rows, spec, path):
    by_k = (spec.sweep or {}).get("axis") == "k"
    series = _series(rows, by_k)
    if not by_k:
        per_est = {}
        for key in series:
            per_est.setdefault((key[0], key[1]), []).append(key)
        if any(len(v) > MAX_LINES_PER_ESTIMATOR for v in per_est.values()):
            series = _tuned(rows)

    plt.rcParams["svg.hashsalt"] = "nnrdiv"
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    for (group, est, tag), pts in sorted(series.items(), key=lambda kv: str(kv[0])):
        pts = sorted(pts)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", ms=3,
                label=f"{est} {tag} ({group})")
    if by_k:
        ax.set_xlabel("k")
    else:
        ax.set_xscale("log")
        ax.set_xlabel("N")
    ax.set_yscale("log")
    ax.set_ylabel("MSE")
    ax.set_title(spec.name)
    ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path

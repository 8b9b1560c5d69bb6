"""Figure rendering for the report path: PNG files next to the CSV/JSON artifacts.

Everything goes through the Agg backend so runs are headless and the emitted
bytes depend only on the data (no timestamps), which keeps figures inside the
determinism contract.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "render_solution",
    "render_pde",
    "render_reports",
    "render_stability",
    "render_cross_validate",
]

_DPI = 120


def _save(fig, path):
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return str(path)


def render_solution(sol, path) -> str:
    """Value band over time with the expected cumulative push."""
    lat = sol.lattice
    times = lat.times
    lo = np.array([float(np.min(y)) for y in sol.Y])
    hi = np.array([float(np.max(y)) for y in sol.Y])
    mean = np.array([float(np.sum(r * y)) for r, y in zip(sol.reach, sol.Y)])
    k_mean = np.array([float(np.sum(r * k)) for r, k in zip(sol.reach, sol.K)])
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.fill_between(times, lo, hi, alpha=0.25, label="node range")
    ax1.plot(times, mean, lw=1.5, label="mean under lattice measure")
    ax1.set_ylabel("Y")
    ax1.legend(loc="best", fontsize=8)
    ax1.set_title(f"reflected solution, {lat.n_steps} steps (y0 = {sol.y0:.6g})")
    ax2.plot(times, k_mean, lw=1.5)
    ax2.set_ylabel("E[K_t]")
    ax2.set_xlabel("t")
    fig.tight_layout()
    return _save(fig, path)


def render_pde(sol, path) -> str:
    """Value surface with the obstacle-contact region."""
    g = sol.grid
    fig, ax = plt.subplots(figsize=(7, 5))
    im = ax.imshow(sol.u, aspect="auto", origin="lower",
                   extent=[g.x_min, g.x_max, 0.0, g.horizon])
    fig.colorbar(im, ax=ax, label="u(t, x)")
    if sol.obstacle_active.any():
        ax.contour(g.xs, g.ts, sol.obstacle_active.astype(float), levels=[0.5],
                   colors="white", linewidths=1.0)
    ax.set_xlabel("x")
    ax.set_ylabel("t")
    ax.set_title(f"obstacle problem ({sol.scheme} scheme)")
    fig.tight_layout()
    return _save(fig, path)


def render_reports(reports, path) -> str:
    """Metric vs tolerance per report, log scale."""
    names = [r.name for r in reports]
    floor = 1e-18
    metrics = [max(abs(r.metric), floor) if np.isfinite(r.metric) else floor
               for r in reports]
    tols = [max(r.tolerance, floor) for r in reports]
    colors = ["tab:green" if r.status == "pass"
              else "tab:orange" if r.status == "inconclusive" else "tab:red"
              for r in reports]
    fig, ax = plt.subplots(figsize=(7, 4))
    pos = np.arange(len(names))
    ax.bar(pos, metrics, color=colors, label="metric")
    ax.plot(pos, tols, "k_", markersize=18, label="tolerance")
    ax.set_yscale("log")
    ax.set_xticks(pos)
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("metric")
    ax.legend(loc="best", fontsize=8)
    ax.set_title("property reports")
    fig.tight_layout()
    return _save(fig, path)


def render_stability(details, path) -> str:
    """Sup-error decay and the exponential statistic against 1/n."""
    ns = np.asarray(details["ns"], dtype=float)
    errs = np.asarray(details["sup_errors"], dtype=float)
    stats = np.asarray(details["exp_stats"], dtype=float)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.loglog(ns, np.maximum(errs, 1e-18), "o-", label="sup |Y^n - Y^0|")
    ax1.loglog(ns, errs[0] * ns[0] / ns, "k--", lw=1, label="C/n")
    ax1.set_xlabel("n")
    ax1.legend(fontsize=8)
    ax2.semilogx(ns, stats, "o-")
    ax2.axhline(1.0, color="k", lw=1, ls="--")
    ax2.set_xlabel("n")
    ax2.set_ylabel("exp statistic")
    fig.tight_layout()
    return _save(fig, path)


def render_cross_validate(details, path) -> str:
    """Per-probe gaps between the lattice and PDE value functions."""
    gaps = details.get("gaps", {})
    labels = list(gaps.keys())
    vals = [max(gaps[k], 1e-18) for k in labels]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(np.arange(len(labels)), vals, color="tab:blue")
    ax.set_yscale("log")
    ax.set_xticks(np.arange(len(labels)))
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("|u_lattice - u_pde|")
    ax.set_title("cross validation")
    fig.tight_layout()
    return _save(fig, path)

"""Figure rendering to deterministic SVG files."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import surrogate as sg  # noqa: E402
from .diagnostics import read_metrics, window_mean  # noqa: E402
from .oracle import pareto_flags, read_biasvar_csv  # noqa: E402

PLOT_KINDS = (
    "weight_curves",
    "biasvar_pareto",
    "learning_curves",
    "utilization_bars",
    "kl_ess_scatter",
    "lag_tail_scatter",
    "sigma_sensitivity",
)

COLORS = {"GIPO": "#1f77b4", "PPOClip": "#d62728", "SAPO": "#2ca02c", "NoClip": "#7f7f7f"}

_RC = {
    "svg.hashsalt": "gipolab",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(_RC):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def _fig(ncols=1, nrows=1, width=4.0, height=3.0):
    with plt.rc_context(_RC):
        return plt.subplots(nrows, ncols, figsize=(width * ncols, height * nrows), squeeze=False)


def weight_curves(out, sigma: float = 1.0, eps: float = 0.2, tau_pos: float = 2.0, tau_neg: float = 1.0):
    """Effective multipliers against rho (top) and log rho (bottom), both advantage signs."""
    rho = np.geomspace(np.exp(-3.0), np.exp(3.0), 601)
    fig, axes = _fig(2, 2)
    curves = {
        f"GIPO (sigma={sigma:g})": lambda s: sg.gipo_multiplier(rho, sigma),
        f"PPO-Clip (eps={eps:g})": lambda s: sg.ppo_effective_multiplier(rho, s, eps),
        "SAPO": lambda s: sg.sapo_multiplier(rho, s, tau_pos, tau_neg),
        "No-Clip": lambda s: rho,
    }
    colors = list(COLORS.values())
    for col, sign in enumerate((1, -1)):
        for (name, fn), c in zip(curves.items(), colors):
            y = fn(sign)
            axes[0][col].plot(rho, y, color=c, label=name, lw=1.2)
            axes[1][col].plot(np.log(rho), y, color=c, label=name, lw=1.2)
        axes[0][col].set_xlim(0, 4)
        axes[0][col].set_ylim(0, 4)
        axes[0][col].set_xlabel("rho")
        axes[1][col].set_xlabel("log rho")
        axes[1][col].set_ylim(0, 4)
        axes[0][col].set_title(f"A {'> 0' if sign > 0 else '< 0'}")
    axes[0][0].set_ylabel("multiplier on grad log pi * A")
    axes[1][0].set_ylabel("multiplier on grad log pi * A")
    axes[0][0].legend(frameon=False, fontsize=7)
    fig.tight_layout()
    return _save(fig, out)


def biasvar_pareto(csv_path, out):
    """Bias-variance scatter per case with the GIPO frontier dashed."""
    rows = read_biasvar_csv(csv_path)
    if not rows:
        raise ValueError(f"{csv_path}: no data rows")
    cases = sorted({c for c, _ in rows})
    fig, axes = _fig(len(cases))
    for ax, case in zip(axes[0], cases):
        pts = [p for c, p in rows if c == case]
        gipo = sorted((p for p in pts if p.method == "GIPO"), key=lambda p: p.param)
        ax.scatter([p.bias for p in gipo], [p.variance for p in gipo], s=10, color=COLORS["GIPO"], label="GIPO")
        flags = pareto_flags([(p.bias, p.variance) for p in gipo])
        front = sorted((p for p, f in zip(gipo, flags) if f), key=lambda p: p.bias)
        if front:
            ax.plot([p.bias for p in front], [p.variance for p in front], "--", color=COLORS["GIPO"], lw=1)
        for p in pts:
            if p.method != "GIPO":
                ax.scatter([p.bias], [p.variance], s=40, marker="D", color=COLORS.get(p.method, "k"), label=p.method)
        ax.set_title(f"Case {case}")
        ax.set_xlabel("bias")
        ax.set_ylabel("variance")
    axes[0][0].legend(frameon=False, fontsize=7)
    fig.tight_layout()
    return _save(fig, out)


def _group_runs(csv_paths):
    runs = []
    for path in csv_paths:
        rows = read_metrics(path)
        runs.append((Path(path), rows))
    return runs


def _label(path: Path, rows) -> str:
    method = rows[0]["method"]
    sigma = rows[0].get("sigma")
    tag = f"{method}" + (f" s={sigma:g}" if sigma is not None else "")
    return f"{tag} [{path.parent.name}]"


def learning_curves(csv_paths, out):
    fig, axes = _fig(1, 1, 5.0, 3.2)
    ax = axes[0][0]
    for path, rows in _group_runs(csv_paths):
        ax.plot([r["env_steps"] for r in rows], [r["avg_return"] for r in rows], lw=1.0,
                color=COLORS.get(rows[0]["method"]), label=_label(path, rows))
    ax.set_xlabel("environment steps")
    ax.set_ylabel("discounted return from start")
    ax.legend(frameon=False, fontsize=6)
    fig.tight_layout()
    return _save(fig, out)


def _window(rows, key):
    pts = [(r["env_steps"], r[key]) for r in rows if r.get(key) is not None]
    if not pts:
        return float("nan")
    s, v = zip(*pts)
    return window_mean(s, v)


def utilization_bars(csv_paths, out):
    """Final-window dead / suppressed / near-zero fractions per run (log y-axis)."""
    runs = _group_runs(csv_paths)
    keys = ("dead_frac", "suppressed_frac", "near_zero_frac")
    fig, axes = _fig(1, 1, 5.0, 3.2)
    ax = axes[0][0]
    width = 0.8 / len(runs)
    for i, (path, rows) in enumerate(runs):
        vals = [max(_window(rows, k), 1e-6) for k in keys]
        ax.bar(np.arange(3) + i * width, vals, width, label=_label(path, rows), color=COLORS.get(rows[0]["method"]))
    ax.set_yscale("log")
    ax.set_xticks(np.arange(3) + 0.4 - width / 2)
    ax.set_xticklabels(["dead", "suppressed", "near-zero"])
    ax.legend(frameon=False, fontsize=6)
    fig.tight_layout()
    return _save(fig, out)


def kl_ess_scatter(csv_paths, out):
    runs = _group_runs(csv_paths)
    kl = [_window(r, "kl_to_behavior") for _, r in runs]
    ess = [_window(r, "ess_old_norm") for _, r in runs]
    ret = [_window(r, "avg_return") for _, r in runs]
    fig, axes = _fig(1, 1, 4.5, 3.2)
    ax = axes[0][0]
    sc = ax.scatter(kl, ess, c=ret, cmap="viridis", s=40)
    for (path, rows), x, y in zip(runs, kl, ess):
        ax.annotate(_label(path, rows), (x, y), fontsize=6)
    fig.colorbar(sc, ax=ax, label="return")
    ax.set_xlabel("KL(behavior || learner)")
    ax.set_ylabel("normalized old-data ESS")
    fig.tight_layout()
    return _save(fig, out)


def lag_tail_scatter(csv_paths, out):
    """d95 against OldGapP95 over all logged points, with a least-squares line and R^2."""
    xs, ys = [], []
    for _, rows in _group_runs(csv_paths):
        for r in rows:
            if r.get("d95") is not None and r.get("old_gap_p95") is not None:
                xs.append(r["old_gap_p95"])
                ys.append(r["d95"])
    if len(xs) < 2:
        raise ValueError("lag_tail_scatter needs at least two logged points")
    x, y = np.asarray(xs), np.asarray(ys)
    fig, axes = _fig(1, 1, 4.5, 3.2)
    ax = axes[0][0]
    ax.scatter(x, y, s=6, alpha=0.6)
    if np.ptp(x) > 0:
        slope, icpt = np.polyfit(x, y, 1)
        pred = slope * x + icpt
        ss_tot = np.sum((y - y.mean()) ** 2)
        r2 = 1.0 - np.sum((y - pred) ** 2) / ss_tot if ss_tot > 0 else float("nan")
        grid = np.linspace(x.min(), x.max(), 2)
        ax.plot(grid, slope * grid + icpt, "k--", lw=1, label=f"R^2 = {r2:.3f}")
        ax.legend(frameon=False)
    ax.set_xlabel("OldGapP95 (versions)")
    ax.set_ylabel("D0.95 = Q0.95 |log rho|")
    fig.tight_layout()
    return _save(fig, out)


def sigma_sensitivity(csv_path, out):
    """Bars of d95, old-data ESS and return per (regime, sigma) from a sweep CSV."""
    import csv

    data = defaultdict(dict)
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{csv_path}: no data rows")
    for i, r in enumerate(rows, start=2):
        try:
            data[r["regime"]][float(r["sigma"])] = {k: float(r[k]) if r[k] else np.nan
                                                   for k in ("d95", "ess_old_norm", "avg_return")}
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{csv_path}: malformed row {i}: {exc}") from exc
    keys = ("d95", "ess_old_norm", "avg_return")
    fig, axes = _fig(3, 1, 3.2, 3.0)
    regimes = sorted(data)
    for ax, key in zip(axes[0], keys):
        for j, regime in enumerate(regimes):
            sigmas = sorted(data[regime])
            ax.bar(np.arange(len(sigmas)) + 0.4 * j, [data[regime][s][key] for s in sigmas], 0.4, label=regime)
            ax.set_xticks(np.arange(len(sigmas)) + 0.2)
            ax.set_xticklabels([f"{s:g}" for s in sigmas])
        ax.set_title(key)
        ax.set_xlabel("sigma")
    axes[0][0].legend(frameon=False, fontsize=7)
    fig.tight_layout()
    return _save(fig, out)


def render(kind: str, inputs, out, **params) -> Path:
    """Dispatch a plot kind. ``inputs`` is a list of CSV paths (may be empty for weight_curves)."""
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; choose from {', '.join(PLOT_KINDS)}")
    inputs = [Path(p) for p in inputs or []]
    for p in inputs:
        if not p.exists():
            raise FileNotFoundError(f"input {p} does not exist")
    if kind == "weight_curves":
        return weight_curves(out, **params)
    if not inputs:
        raise ValueError(f"{kind} needs at least one input CSV")
    if kind == "biasvar_pareto":
        return biasvar_pareto(inputs[0], out)
    if kind == "sigma_sensitivity":
        return sigma_sensitivity(inputs[0], out)
    return {
        "learning_curves": learning_curves,
        "utilization_bars": utilization_bars,
        "kl_ess_scatter": kl_ess_scatter,
        "lag_tail_scatter": lag_tail_scatter,
    }[kind](inputs, out)

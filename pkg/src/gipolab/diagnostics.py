"""Utilization and ratio-tail diagnostics with windowed aggregation."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .replay import DEFAULT_T_OLD, nearest_rank_quantile

DEFAULT_TAU_M = 1e-2
NEAR_ZERO_REL = 1e-3

METRIC_COLUMNS = (
    "step",
    "env_steps",
    "method",
    "sigma",
    "old_frac",
    "old_gap_p95",
    "d95",
    "dead_frac",
    "suppressed_frac",
    "near_zero_frac",
    "share_old",
    "ess_old_norm",
    "kl_to_behavior",
    "avg_return",
)


@dataclass(frozen=True)
class UtilizationReport:
    near_zero_frac: float
    dead_frac: float
    suppressed_frac: float
    share_old: float
    ess_old: float | None
    ess_old_normalized: float | None
    n_old: int
    tau_u: float
    d95: float | None = None


def default_tau_u(u: np.ndarray) -> float:
    """1e-3 times the median of the nonzero contributions (0 if none)."""
    nz = u[u > 0]
    return float(NEAR_ZERO_REL * np.median(nz)) if nz.size else 0.0


def utilization(
    multipliers,
    advantages,
    version_gaps,
    tau_u: float | None = None,
    tau_m: float = DEFAULT_TAU_M,
    t_old: int = DEFAULT_T_OLD,
    ratios=None,
) -> UtilizationReport:
    """Dead / suppressed / near-zero fractions, old-sample share and ESS.

    Contributions are u_t = |m_t * A_t|. The old subset is gap >= t_old. ESS
    fields are None when the old subset is empty or carries no mass.
    """
    m = np.abs(np.asarray(multipliers, dtype=float))
    adv = np.asarray(advantages, dtype=float)
    gaps = np.asarray(version_gaps)
    if m.size == 0:
        raise ValueError("empty batch")
    if not (m.shape == adv.shape == gaps.shape):
        raise ValueError("multipliers, advantages and version gaps must align")
    u = np.abs(m * adv)
    if tau_u is None:
        tau_u = default_tau_u(u)
    if tau_u < 0 or tau_m < 0:
        raise ValueError("thresholds must be non-negative")
    old = gaps >= t_old
    total = u.sum()
    share_old = float(u[old].sum() / total) if total > 0 else 0.0
    ess = ess_norm = None
    n_old = int(old.sum())
    if n_old and u[old].sum() > 0:
        w = u[old] / u[old].sum()
        ess = float(1.0 / np.sum(w * w))
        ess_norm = ess / n_old
    d95 = tail_drift(ratios) if ratios is not None else None
    return UtilizationReport(
        near_zero_frac=float(np.mean(u <= tau_u)),
        dead_frac=float(np.mean(m == 0)),
        suppressed_frac=float(np.mean((m > 0) & (m <= tau_m))),
        share_old=share_old,
        ess_old=ess,
        ess_old_normalized=ess_norm,
        n_old=n_old,
        tau_u=float(tau_u),
        d95=d95,
    )


def tail_drift(ratios) -> float:
    """Nearest-rank 0.95 quantile of |log rho|."""
    r = np.asarray(ratios, dtype=float)
    if np.any(r <= 0):
        raise ValueError("ratios must be positive")
    return nearest_rank_quantile(np.abs(np.log(r)), 0.95)


def window_mean(steps, values, window_frac: float = 0.2) -> float:
    """Mean of values logged at env-step >= (1 - window_frac) * max step."""
    steps = np.asarray(steps, dtype=float)
    values = np.asarray(values, dtype=float)
    if steps.size == 0 or steps.shape != values.shape:
        raise ValueError("need a nonempty series with aligned steps")
    keep = steps >= (1.0 - window_frac) * steps.max()
    return float(values[keep].mean())


def cross_task_aggregate(task_means) -> tuple:
    """Mean and population standard deviation across tasks."""
    x = np.asarray(task_means, dtype=float)
    if x.size == 0:
        raise ValueError("need at least one task")
    return float(x.mean()), float(x.std())


class MetricWriter:
    """Appends metric rows to a CSV stream, writing the header once."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.DictWriter(self._fh, fieldnames=METRIC_COLUMNS, extrasaction="raise")
        self._writer.writeheader()

    def write(self, row: dict) -> None:
        self._writer.writerow({k: _fmt(row.get(k)) for k in METRIC_COLUMNS})
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def read_metrics(path) -> list:
    """Rows of a metric CSV with numeric fields parsed (blank -> None)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty CSV")
        for i, row in enumerate(reader, start=2):
            out = {}
            for k, v in row.items():
                if k == "method":
                    out[k] = v
                    continue
                try:
                    out[k] = float(v) if v not in ("", None) else None
                except ValueError as exc:
                    raise ValueError(f"{path}: malformed row {i}, column {k!r}: {v!r}") from exc
            rows.append(out)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return rows


def report_dict(report: UtilizationReport) -> dict:
    return asdict(report)

"""Executable checks of the weighting bounds.

Each check returns a :class:`CheckResult`; :func:`run_all` runs the battery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import surrogate as sg
from .oracle import kl_categorical

RATIO_GRID_SIZE = 10**6
SIGMAS = (0.25, 0.5, 1.0, 2.0)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def ratio_grid(n: int = RATIO_GRID_SIZE) -> np.ndarray:
    return np.geomspace(1e-6, 1e6, n)


def multiplier_max_on_grid(sigma: float, grid: np.ndarray):
    """(max of omega*rho on grid, argmax ratio, exact bound exp(sigma^2/2))."""
    m = sg.gipo_multiplier(grid, sigma)
    i = int(np.argmax(m))
    return float(m[i]), float(grid[i]), math.exp(sigma * sigma / 2.0)


def check_multiplier_bound(sigmas=SIGMAS, n: int = RATIO_GRID_SIZE) -> CheckResult:
    """Bound never exceeded; grid max within the discretization error of the peak.

    Near its peak the multiplier is exp(y - y^2 / (2 sigma^2)) in y = log rho,
    so a grid of log-spacing h misses the peak by at most
    bound * (1 - exp(-(h/2)^2 / (2 sigma^2))).
    """
    grid = ratio_grid(n)
    h = math.log(grid[1] / grid[0])
    worst = []
    ok = True
    for s in sigmas:
        mx, arg, bound = multiplier_max_on_grid(s, grid)
        disc = bound * -math.expm1(-((h / 2) ** 2) / (2 * s * s))
        at_peak = abs(math.log(arg) - s * s) <= h
        ok &= mx <= bound * (1 + 1e-15) and bound - mx <= disc and at_peak
        worst.append(f"sigma={s:g}: gap {bound - mx:.2e} (<= {disc:.2e}), argmax log-dist {abs(math.log(arg) - s * s):.1e}")
    return CheckResult("multiplier bound attained at exp(sigma^2)", ok, "; ".join(worst))


def check_log_symmetry(sigmas=SIGMAS, n: int = RATIO_GRID_SIZE, tol: float = 1e-12) -> CheckResult:
    grid = ratio_grid(n)
    err = max(float(np.max(np.abs(sg.gaussian_weight(grid, s) - sg.gaussian_weight(1.0 / grid, s)))) for s in sigmas)
    return CheckResult("log-space symmetry", err <= tol, f"max |w(r) - w(1/r)| = {err:.2e} (tol {tol:g})")


def check_optimal_tau(sigmas=(0.05, 0.25, 0.5, 1.0, 2.0, 5.0), tol: float = 1e-12) -> CheckResult:
    worst_res, worst_gap = 0.0, 0.0
    for s in sigmas:
        t = sg.optimal_tau(s)
        worst_res = max(worst_res, abs(t * math.exp(t) - 2 * s * s))
        at_star = sg.lemma1_bound(t, s, 0.0)
        grid = t * np.linspace(0.5, 1.5, 201)
        worst_gap = max(worst_gap, at_star - min(sg.lemma1_bound(g, s, 0.0) for g in grid))
    ok = worst_res < tol and worst_gap <= 1e-10
    return CheckResult("optimal truncation threshold", ok,
                       f"max residual {worst_res:.1e}, max excess over grid minimum {worst_gap:.1e}")


def random_categorical_pairs(n_pairs: int, rng: np.random.Generator, min_actions: int = 4, max_actions: int = 16):
    for _ in range(n_pairs):
        k = int(rng.integers(min_actions, max_actions + 1))
        conc = float(rng.choice([0.3, 1.0, 3.0]))
        mu = rng.dirichlet(np.full(k, conc))
        pi_new = rng.dirichlet(np.full(k, conc))
        # keep full support so ratios stay finite
        mu = np.maximum(mu, 1e-12)
        pi_new = np.maximum(pi_new, 1e-12)
        yield mu / mu.sum(), pi_new / pi_new.sum()


def attenuation_gap(mu: np.ndarray, pi_new: np.ndarray, sigma: float) -> float:
    """Exact E_{a~pi'}[1 - omega(pi'/mu)] by enumeration."""
    return float(pi_new @ (1.0 - sg.gaussian_weight(pi_new / mu, sigma)))


def check_attenuation_bound(n_pairs: int = 1000, n_tau: int = 20, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    violations, tightest = 0, np.inf
    for mu, pi_new in random_categorical_pairs(n_pairs, rng):
        sigma = float(np.exp(rng.uniform(np.log(0.1), np.log(5.0))))
        lhs = attenuation_gap(mu, pi_new, sigma)
        delta = float(kl_categorical(mu, pi_new))
        for tau in np.geomspace(0.01, 20.0, n_tau):
            slack = sg.lemma1_bound(tau, sigma, delta) - lhs
            tightest = min(tightest, slack)
            violations += slack < 0
    return CheckResult("attenuation bound on random categorical pairs", violations == 0,
                       f"{violations} violations over {n_pairs}x{n_tau}; min slack {tightest:.3e}")


@dataclass(frozen=True)
class SyntheticSurrogate:
    """Enumerable distribution of attenuated summands m(rho) * A.

    rho takes values ``ratios`` with probabilities ``probs``; A is +eps with
    probability ``p_pos`` and -eps otherwise, independently.
    """

    ratios: np.ndarray
    probs: np.ndarray
    eps: float
    sigma: float
    p_pos: float = 0.7

    def mean(self) -> float:
        return float(self.probs @ sg.gipo_multiplier(self.ratios, self.sigma)) * self.eps * (2 * self.p_pos - 1)

    def sample_means(self, n: int, n_batches: int, rng: np.random.Generator) -> np.ndarray:
        m = sg.gipo_multiplier(self.ratios, self.sigma)
        out = np.empty(n_batches)
        chunk = max(1, 2_000_000 // n)
        for start in range(0, n_batches, chunk):
            b = min(chunk, n_batches - start)
            idx = rng.choice(self.ratios.size, size=(b, n), p=self.probs)
            sign = np.where(rng.random((b, n)) < self.p_pos, 1.0, -1.0)
            out[start : start + b] = (m[idx] * sign * self.eps).mean(axis=1)
        return out


def default_synthetic(sigma: float = 1.0, eps: float = 1.0) -> SyntheticSurrogate:
    # heavy-tailed discrete ratios including the multiplier's peak exp(sigma^2)
    ratios = np.array([1e-3, 0.1, 0.5, 1.0, 2.0, math.exp(sigma * sigma), 10.0, 1e3])
    probs = np.array([0.05, 0.1, 0.2, 0.25, 0.15, 0.1, 0.1, 0.05])
    return SyntheticSurrogate(ratios, probs, eps, sigma)


def hoeffding_violation_rate(n: int, alpha: float, n_batches: int = 10_000, sigma: float = 1.0, eps: float = 1.0,
                             seed: int = 0):
    dist = default_synthetic(sigma, eps)
    rng = np.random.default_rng(seed)
    means = dist.sample_means(n, n_batches, rng)
    radius = sg.hoeffding_deviation(sg.BoundInputs(eps, 0.0, 1.0, n, alpha), sigma)
    k = int(np.sum(np.abs(means - dist.mean()) > radius))
    # one-sided test of H0: violation probability <= alpha
    p_value = float(stats.binom.sf(k - 1, n_batches, alpha)) if k > 0 else 1.0
    return k / n_batches, p_value


def check_hoeffding(ns=(100, 1000), alphas=(0.05, 0.01), n_batches: int = 10_000, seed: int = 0) -> CheckResult:
    parts, ok = [], True
    for i, n in enumerate(ns):
        for j, a in enumerate(alphas):
            rate, p = hoeffding_violation_rate(n, a, n_batches, seed=seed + 10 * i + j)
            ok &= rate <= a and p >= 1e-3
            parts.append(f"N={n},alpha={a:g}: rate {rate:.4f}")
    return CheckResult("finite-sample deviation coverage", ok, "; ".join(parts))


def check_domain(sigma: float) -> CheckResult:
    try:
        sg.gaussian_weight(2.0, sigma)
    except sg.DomainError as exc:
        return CheckResult("domain check", False, f"sigma={sigma:g} rejected: {exc}")
    return CheckResult("domain check", True, f"sigma={sigma:g} accepted")


def run_all(sigma: float | None = None, quick: bool = False) -> list:
    results = []
    if sigma is not None:
        results.append(check_domain(sigma))
        if not results[-1].passed:
            return results
    n = 10**5 if quick else RATIO_GRID_SIZE
    results += [
        check_multiplier_bound(n=n),
        check_log_symmetry(n=n),
        check_optimal_tau(),
        check_attenuation_bound(n_pairs=200 if quick else 1000),
        check_hoeffding(n_batches=2000 if quick else 10_000),
    ]
    return results

"""Ratio handling for replay-heavy policy gradients.

Gaussian trust weights, the effective gradient multiplier of each actor-side
surrogate, and calculators for the improvement / concentration bounds that go
with the Gaussian weighting.

All functions accept scalars or numpy arrays and are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

ArrayLike = Union[float, np.ndarray]

RHO_MIN = 1e-6
RHO_MAX = 1e6


class DomainError(ValueError):
    """Raised when a ratio, scale or bound input is outside its domain."""


# ---------------------------------------------------------------------------
# Surrogate kinds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GIPO:
    sigma: float = 1.0

    def __post_init__(self):
        _check_positive(self.sigma, "sigma")

    @property
    def label(self) -> str:
        return "GIPO"

    @property
    def param(self) -> float:
        return self.sigma


@dataclass(frozen=True)
class PPOClip:
    eps: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise DomainError(f"eps must lie in (0, 1), got {self.eps}")

    @property
    def label(self) -> str:
        return "PPOClip"

    @property
    def param(self) -> float:
        return self.eps


@dataclass(frozen=True)
class SAPO:
    tau_pos: float = 2.0
    tau_neg: float = 1.0

    def __post_init__(self):
        _check_positive(self.tau_pos, "tau_pos")
        _check_positive(self.tau_neg, "tau_neg")

    @property
    def label(self) -> str:
        return "SAPO"

    @property
    def param(self) -> float:
        return self.tau_pos


@dataclass(frozen=True)
class NoClip:
    @property
    def label(self) -> str:
        return "NoClip"

    @property
    def param(self) -> float:
        return float("nan")


SurrogateKind = Union[GIPO, PPOClip, SAPO, NoClip]


def surrogate_from_name(name: str, **params) -> SurrogateKind:
    """Build a surrogate kind from a case-insensitive name and its parameters."""
    key = name.lower().replace("-", "").replace("_", "")
    table = {"gipo": GIPO, "ppoclip": PPOClip, "ppo": PPOClip, "sapo": SAPO, "noclip": NoClip, "is": NoClip}
    if key not in table:
        raise ValueError(f"unknown surrogate {name!r}")
    return table[key](**params)


# ---------------------------------------------------------------------------
# Weights and multipliers
# ---------------------------------------------------------------------------


def _check_positive(x, name):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} must be positive and finite")


def clamp_ratio(rho: ArrayLike, rho_min: float = RHO_MIN, rho_max: float = RHO_MAX) -> ArrayLike:
    return np.clip(rho, rho_min, rho_max)


def gaussian_weight(rho: ArrayLike, sigma: float, rho_min: float = RHO_MIN, rho_max: float = RHO_MAX) -> ArrayLike:
    """Gaussian trust weight exp(-(log rho)^2 / (2 sigma^2)).

    The ratio is clamped to [rho_min, rho_max] before the log. Symmetric under
    rho -> 1/rho and equal to 1 only at rho == 1.
    """
    _check_positive(rho, "rho")
    _check_positive(sigma, "sigma")
    z = np.log(clamp_ratio(rho, rho_min, rho_max)) / sigma
    return np.exp(-0.5 * z * z)


def gipo_multiplier(rho: ArrayLike, sigma: float) -> ArrayLike:
    """Effective coefficient omega(rho) * rho on grad log pi * A."""
    return gaussian_weight(rho, sigma) * rho


def ppo_effective_multiplier(rho: ArrayLike, adv_sign: ArrayLike, eps: float) -> ArrayLike:
    """Coefficient on grad log pi * A induced by the PPO min/clip objective.

    Returns ``rho`` where the unclipped branch of
    ``min(rho*A, clip(rho, 1-eps, 1+eps)*A)`` is active and 0 where the
    constant clipped branch is selected. ``adv_sign == 0`` counts as unclipped.
    """
    _check_positive(rho, "rho")
    if not 0.0 < eps < 1.0:
        raise DomainError(f"eps must lie in (0, 1), got {eps}")
    rho = np.asarray(rho, dtype=float)
    sign = np.sign(np.asarray(adv_sign, dtype=float))
    clipped = ((sign > 0) & (rho > 1.0 + eps)) | ((sign < 0) & (rho < 1.0 - eps))
    out = np.where(clipped, 0.0, rho)
    return out if out.ndim else float(out)


def sapo_multiplier(rho: ArrayLike, adv_sign: ArrayLike, tau_pos: float = 2.0, tau_neg: float = 1.0) -> ArrayLike:
    """Soft asymmetric clip: 1 + tau * tanh((rho - 1) / tau).

    ``tau = tau_pos`` for non-negative advantages, ``tau_neg`` otherwise.
    Equals 1 with unit slope at rho == 1 and saturates at 1 + tau.
    """
    _check_positive(rho, "rho")
    _check_positive(tau_pos, "tau_pos")
    _check_positive(tau_neg, "tau_neg")
    rho = np.asarray(rho, dtype=float)
    tau = np.where(np.asarray(adv_sign, dtype=float) >= 0, tau_pos, tau_neg)
    out = 1.0 + tau * np.tanh((rho - 1.0) / tau)
    return out if out.ndim else float(out)


def multiplier(kind: SurrogateKind, rho: ArrayLike, adv: ArrayLike) -> ArrayLike:
    """Dispatch to the effective multiplier of ``kind``."""
    if isinstance(kind, GIPO):
        return gipo_multiplier(rho, kind.sigma)
    if isinstance(kind, PPOClip):
        return ppo_effective_multiplier(rho, np.sign(adv), kind.eps)
    if isinstance(kind, SAPO):
        return sapo_multiplier(rho, np.sign(adv), kind.tau_pos, kind.tau_neg)
    if isinstance(kind, NoClip):
        _check_positive(rho, "rho")
        return np.asarray(rho, dtype=float) * 1.0
    raise TypeError(f"not a surrogate kind: {kind!r}")


# ---------------------------------------------------------------------------
# Bounds
# ---------------------------------------------------------------------------


def lemma1_bound(tau: float, sigma: float, delta: float) -> float:
    """Upper bound on E_{a~pi'}[1 - omega]: tau^2/(2 sigma^2) + 2 e^-tau + sqrt(delta/2)."""
    _check_positive(tau, "tau")
    _check_positive(sigma, "sigma")
    if delta < 0:
        raise DomainError("delta must be non-negative")
    return tau * tau / (2.0 * sigma * sigma) + 2.0 * math.exp(-tau) + math.sqrt(delta / 2.0)


def lambert_w(x: float, tol: float = 1e-12, max_iter: int = 100) -> float:
    """Principal branch of Lambert W for x >= 0 via Newton on w e^w - x.

    Starts at log(1 + x); w e^w is increasing and convex on w >= 0, so the
    iterates approach the root monotonically from above.
    """
    if x < 0:
        raise DomainError("lambert_w is only implemented for x >= 0")
    if x == 0:
        return 0.0
    w = math.log1p(x)
    for _ in range(max_iter):
        ew = math.exp(w)
        f = w * ew - x
        if abs(f) < tol:
            break
        w_new = w - f / (ew * (w + 1.0))
        if w_new == w:
            break
        w = w_new
    return w


def optimal_tau(sigma: float) -> float:
    """Truncation threshold minimizing the attenuation penalty: tau* = W(2 sigma^2)."""
    _check_positive(sigma, "sigma")
    return lambert_w(2.0 * sigma * sigma)


def optimal_penalty(sigma: float) -> float:
    """Minimized tau^2/(2 sigma^2) + 2 e^-tau, i.e. tau*(tau* + 2) / (2 sigma^2)."""
    t = optimal_tau(sigma)
    return t * (t + 2.0) / (2.0 * sigma * sigma)


@dataclass(frozen=True)
class BoundInputs:
    eps_adv: float
    delta: float
    tau: float
    n: int
    alpha: float

    def __post_init__(self):
        if self.eps_adv < 0 or self.delta < 0:
            raise DomainError("eps_adv and delta must be non-negative")
        if self.tau <= 0:
            raise DomainError("tau must be positive")
        if self.n < 1:
            raise DomainError("n must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError("alpha must lie in (0, 1)")


def hoeffding_deviation(inputs: BoundInputs, sigma: float) -> float:
    """Two-sided Hoeffding radius for the attenuated surrogate mean.

    Each summand lies in [-c, c] with c = eps * exp(sigma^2 / 2); with
    probability at least 1 - alpha the sample mean is within
    c * sqrt(2 ln(2/alpha) / N) of its expectation.
    """
    _check_positive(sigma, "sigma")
    c = inputs.eps_adv * math.exp(sigma * sigma / 2.0)
    return c * math.sqrt(2.0 * math.log(2.0 / inputs.alpha) / inputs.n)


def performance_lower_bound(
    surrogate_value: float,
    kl_mu_pi_max: float,
    kl_pi_pinew_max: float,
    kl_mu_pinew_max: float,
    eps_adv: float,
    gamma: float,
    sigma: float,
    tau: float,
) -> float:
    """Certificate J(pi') >= L~ - C(...) - eps/(1-gamma) * lemma1_bound.

    C = 4 gamma eps / (1 - gamma)^2. The KL arguments are per-state maxima.
    """
    if min(kl_mu_pi_max, kl_pi_pinew_max, kl_mu_pinew_max) < 0:
        raise DomainError("KL inputs must be non-negative")
    if not 0.0 < gamma < 1.0:
        raise DomainError("gamma must lie in (0, 1)")
    if eps_adv < 0:
        raise DomainError("eps_adv must be non-negative")
    c = 4.0 * gamma * eps_adv / (1.0 - gamma) ** 2
    trust = math.sqrt(kl_mu_pi_max) * math.sqrt(kl_pi_pinew_max) + kl_pi_pinew_max
    attenuation = eps_adv / (1.0 - gamma) * lemma1_bound(tau, sigma, kl_mu_pinew_max)
    return surrogate_value - c * trust - attenuation

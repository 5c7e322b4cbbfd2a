"""Advantage and value-target construction (GAE and V-trace)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TargetSet:
    advantages: np.ndarray
    value_targets: np.ndarray


def _prepare(rewards, values, discounts):
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if rewards.ndim != 1 or rewards.size == 0:
        raise ValueError("rewards must be a nonempty 1-d sequence")
    if values.shape != (rewards.size + 1,):
        raise ValueError(f"values must have length {rewards.size + 1} (segment plus bootstrap), got {values.size}")
    discounts = np.broadcast_to(np.asarray(discounts, dtype=float), rewards.shape)
    return rewards, values, discounts


def step_discounts(gamma: float, dones) -> np.ndarray:
    """gamma where the episode continues, 0 after a terminal transition."""
    return gamma * (1.0 - np.asarray(dones, dtype=float))


def gae(rewards, values, gamma: float = 0.99, lam: float = 0.95, dones=None) -> TargetSet:
    """Generalized advantage estimation.

    Args:
        rewards: r_0..r_{T-1}.
        values: V(s_0)..V(s_T); the last entry is the bootstrap value.
        gamma: discount.
        lam: GAE lambda.
        dones: optional terminal flags; a terminal step cuts the recursion.

    Returns:
        TargetSet with A_t = sum_k (gamma lam)^k delta_{t+k} and v_t = A_t + V(s_t).
    """
    disc = gamma if dones is None else step_discounts(gamma, dones)
    rewards, values, disc = _prepare(rewards, values, disc)
    deltas = rewards + disc * values[1:] - values[:-1]
    adv = np.empty_like(rewards)
    acc = 0.0
    for t in range(rewards.size - 1, -1, -1):
        acc = deltas[t] + disc[t] * lam * acc
        adv[t] = acc
    return TargetSet(adv, adv + values[:-1])


def vtrace(
    rewards,
    values,
    log_rhos,
    gamma: float = 0.99,
    rho_bar: float = 1.0,
    c_bar: float = 1.0,
    dones=None,
    weight_pg: bool = True,
) -> TargetSet:
    """V-trace value targets and policy-gradient advantages.

    ``log_rhos`` are log(pi/mu) for the logged actions. The advantage for step s
    is clip_rho_s * (r_s + gamma v_{s+1} - V(s_s)) with v_T = V(s_T). With
    ``weight_pg=False`` the clip_rho_s factor is dropped, for use with a
    surrogate that already applies its own ratio multiplier.
    """
    if not rho_bar >= c_bar > 0:
        raise ValueError("require rho_bar >= c_bar > 0")
    disc = gamma if dones is None else step_discounts(gamma, dones)
    rewards, values, disc = _prepare(rewards, values, disc)
    log_rhos = np.asarray(log_rhos, dtype=float)
    if log_rhos.shape != rewards.shape:
        raise ValueError("log_rhos must align with rewards")
    rhos = np.exp(log_rhos)
    clipped = np.minimum(rho_bar, rhos)
    cs = np.minimum(c_bar, rhos)
    deltas = clipped * (rewards + disc * values[1:] - values[:-1])
    corr = np.empty_like(rewards)
    acc = 0.0
    for t in range(rewards.size - 1, -1, -1):
        acc = deltas[t] + disc[t] * cs[t] * acc
        corr[t] = acc
    vs = values[:-1] + corr
    vs_next = np.append(vs[1:], values[-1])
    adv = rewards + disc * vs_next - values[:-1]
    if weight_pg:
        adv = clipped * adv
    return TargetSet(adv, vs)


def one_step_targets(
    rewards,
    values,
    next_values,
    discounts,
    scheme: str = "gae",
    log_rhos=None,
    rho_bar: float = 1.0,
    c_bar: float = 1.0,
) -> TargetSet:
    """Targets for a batch of independent length-1 segments.

    Row i is the segment (r_i,) with values (V(s_i), bootstrap_i) and per-step
    discount ``discounts[i]`` (0 after a true terminal). Matches calling
    :func:`gae` / :func:`vtrace` (``weight_pg=False``) on each row separately.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    next_values = np.asarray(next_values, dtype=float)
    discounts = np.asarray(discounts, dtype=float)
    delta = rewards + discounts * next_values - values
    if scheme == "gae":
        return TargetSet(delta, delta + values)
    if scheme == "vtrace":
        if log_rhos is None:
            raise ValueError("vtrace needs log_rhos")
        if not rho_bar >= c_bar > 0:
            raise ValueError("require rho_bar >= c_bar > 0")
        clipped = np.minimum(rho_bar, np.exp(np.asarray(log_rhos, dtype=float)))
        return TargetSet(delta, values + clipped * delta)
    raise ValueError(f"unknown target scheme {scheme!r}")

"""Brute-force direct-sum evaluations used as test oracles for the target module."""

import numpy as np


def gae_direct(rewards, values, gamma, lam, dones=None):
    """A_t = sum_k (prod of gamma_j lam over the k steps) * delta_{t+k}, by explicit double sum."""
    T = len(rewards)
    g = np.full(T, gamma) if dones is None else gamma * (1.0 - np.asarray(dones, float))
    delta = [rewards[t] + g[t] * values[t + 1] - values[t] for t in range(T)]
    adv = np.zeros(T)
    for t in range(T):
        for k in range(T - t):
            w = 1.0
            for j in range(t, t + k):
                w *= g[j] * lam
            adv[t] += w * delta[t + k]
    return adv, adv + np.asarray(values[:T])


def vtrace_direct(rewards, values, log_rhos, gamma, rho_bar, c_bar, dones=None):
    """Truncated-sum definition of v_s and the clipped policy-gradient advantage."""
    T = len(rewards)
    g = np.full(T, gamma) if dones is None else gamma * (1.0 - np.asarray(dones, float))
    rho = np.exp(np.asarray(log_rhos, float))
    rb = np.minimum(rho_bar, rho)
    c = np.minimum(c_bar, rho)
    delta = [rewards[t] + g[t] * values[t + 1] - values[t] for t in range(T)]
    vs = np.zeros(T)
    for s in range(T):
        total = values[s]
        for t in range(s, T):
            w = 1.0
            for i in range(s, t):
                w *= g[i] * c[i]
            total += w * rb[t] * delta[t]
        vs[s] = total
    nxt = list(vs[1:]) + [values[T]]
    adv = np.array([rb[s] * (rewards[s] + g[s] * nxt[s] - values[s]) for s in range(T)])
    return adv, vs


def random_segment(rng, max_len=10):
    T = int(rng.integers(1, max_len + 1))
    rewards = rng.normal(size=T)
    values = rng.normal(size=T + 1)
    log_rhos = rng.normal(0, 1, size=T)
    dones = rng.random(T) < 0.15
    return rewards, values, log_rhos, dones

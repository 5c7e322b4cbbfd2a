"""Exact, sampling-free evaluation on enumerable MDPs.

Bellman solves, discounted occupancies, and the one-step gradient
bias/variance study on the 2x2 GridWorld, computed by enumerating actions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import surrogate as sg
from .policy import ACTIONS, SoftmaxTabularPolicy

DIRECT_SOLVE_MAX_STATES = 64

MOVES = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}


class ConvergenceError(RuntimeError):
    def __init__(self, residual: float):
        super().__init__(f"Bellman solve did not converge (residual {residual:.3e})")
        self.residual = residual


@dataclass
class ExactMDP:
    """Tabular MDP.

    ``transitions[s, a, s']`` are probabilities, ``rewards[s, a]`` expected
    one-step rewards. Absorbing states must self-loop with zero reward.
    """

    transitions: np.ndarray
    rewards: np.ndarray
    gamma: float
    initial_state: int = 0
    absorbing: frozenset = field(default_factory=frozenset)
    state_names: tuple = ()
    action_names: tuple = ()

    def __post_init__(self):
        P = np.asarray(self.transitions, dtype=float)
        R = np.asarray(self.rewards, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or R.shape != P.shape[:2]:
            raise ValueError("transitions must be (S, A, S) and rewards (S, A)")
        if np.any(P < 0) or not np.allclose(P.sum(axis=2), 1.0, atol=1e-12):
            raise ValueError("transition rows must be probability distributions")
        for s in self.absorbing:
            if not np.allclose(P[s, :, s], 1.0) or np.any(R[s] != 0):
                raise ValueError(f"absorbing state {s} must self-loop with zero reward")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        self.transitions, self.rewards = P, R
        self.absorbing = frozenset(self.absorbing)

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    def policy_matrices(self, pi: np.ndarray):
        """State-to-state kernel and expected reward under action probs ``pi``."""
        P_pi = np.einsum("sa,sat->st", pi, self.transitions)
        r_pi = np.sum(pi * self.rewards, axis=1)
        return P_pi, r_pi

    def step(self, state: int, action: int, rng: np.random.Generator):
        nxt = int(rng.choice(self.n_states, p=self.transitions[state, action]))
        return nxt, float(self.rewards[state, action]), nxt in self.absorbing


def gridworld(rows: int, cols: int, gamma: float = 0.99, step_reward: float = -1.0) -> ExactMDP:
    """Deterministic grid with start at the top-left and goal at the bottom-right.

    Moves off the grid leave the state unchanged; every step taken outside the
    goal costs ``step_reward``; the goal absorbs.
    """
    n = rows * cols
    goal = n - 1
    P = np.zeros((n, 4, n))
    R = np.zeros((n, 4))
    for s in range(n):
        r, c = divmod(s, cols)
        for a, name in enumerate(ACTIONS):
            if s == goal:
                P[s, a, s] = 1.0
                continue
            dr, dc = MOVES[name]
            nr, nc = r + dr, c + dc
            t = nr * cols + nc if 0 <= nr < rows and 0 <= nc < cols else s
            P[s, a, t] = 1.0
            R[s, a] = step_reward
    return ExactMDP(P, R, gamma, 0, frozenset({goal}), tuple(f"S{i}" for i in range(n)), ACTIONS)


def gridworld_2x2(gamma: float = 0.99) -> ExactMDP:
    """S0 top-left (start), S1 top-right, S2 bottom-left, SG bottom-right."""
    mdp = gridworld(2, 2, gamma)
    mdp.state_names = ("S0", "S1", "S2", "SG")
    return mdp


# ---------------------------------------------------------------------------
# Bellman machinery
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Values:
    V: np.ndarray
    Q: np.ndarray
    A: np.ndarray
    residual: float


def _action_probs(mdp: ExactMDP, policy) -> np.ndarray:
    if isinstance(policy, SoftmaxTabularPolicy):
        pi = policy.probs()
    else:
        pi = np.asarray(policy, dtype=float)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy must give ({mdp.n_states}, {mdp.n_actions}) probabilities")
    return pi


def solve_values(mdp: ExactMDP, policy, tol: float = 1e-12, max_iter: int = 1_000_000) -> Values:
    """Exact V, Q and A = Q - V for ``policy`` (tabular policy or prob table)."""
    pi = _action_probs(mdp, policy)
    P_pi, r_pi = mdp.policy_matrices(pi)
    keep = np.ones(mdp.n_states, dtype=bool)
    keep[list(mdp.absorbing)] = False
    V = np.zeros(mdp.n_states)
    if mdp.n_states <= DIRECT_SOLVE_MAX_STATES:
        # absorbing states have V = 0, so solve on the transient block only
        idx = np.flatnonzero(keep)
        M = np.eye(idx.size) - mdp.gamma * P_pi[np.ix_(idx, idx)]
        V[idx] = np.linalg.solve(M, r_pi[idx])
    else:
        for _ in range(max_iter):
            V_new = r_pi + mdp.gamma * P_pi @ V
            V_new[~keep] = 0.0
            if np.max(np.abs(V_new - V)) < tol:
                V = V_new
                break
            V = V_new
    residual = float(np.max(np.abs(V - (r_pi + mdp.gamma * P_pi @ V))))
    if not np.isfinite(residual) or residual > 1e3 * tol * max(1.0, np.max(np.abs(V))):
        raise ConvergenceError(residual)
    Q = mdp.rewards + mdp.gamma * mdp.transitions @ V
    return Values(V, Q, Q - V[:, None], residual)


def bellman_residual(mdp: ExactMDP, policy, V: np.ndarray) -> float:
    P_pi, r_pi = mdp.policy_matrices(_action_probs(mdp, policy))
    return float(np.max(np.abs(V - (r_pi + mdp.gamma * P_pi @ V))))


def occupancy(mdp: ExactMDP, policy, start: int | None = None) -> np.ndarray:
    """Normalized discounted state occupancy (1 - gamma) sum_t gamma^t Pr(s_t = s)."""
    pi = _action_probs(mdp, policy)
    P_pi, _ = mdp.policy_matrices(pi)
    p0 = np.zeros(mdp.n_states)
    p0[mdp.initial_state if start is None else start] = 1.0
    # d^T (I - gamma P) = (1 - gamma) p0^T
    d = np.linalg.solve((np.eye(mdp.n_states) - mdp.gamma * P_pi).T, (1.0 - mdp.gamma) * p0)
    return d


def expected_return(mdp: ExactMDP, policy) -> float:
    """Discounted return from the initial state."""
    return float(solve_values(mdp, policy).V[mdp.initial_state])


def kl_categorical(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """KL(p || q) along the last axis."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return terms.sum(axis=-1)


# ---------------------------------------------------------------------------
# Behavior cases
# ---------------------------------------------------------------------------

TARGET_LOGITS = (0.0, 1.0, 0.0, 1.0)
BASE_LOGITS = {
    "rand": (0.0, 0.0, 0.0, 0.0),
    "right": (0.0, 0.0, 0.0, 1.0),
    "down": (0.0, 1.0, 0.0, 0.0),
}


@dataclass(frozen=True)
class BehaviorCase:
    """Mixture of base softmax policies (rand, right, down), mixed in probability space."""

    name: str
    weights: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (3,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be 3 nonnegative numbers summing to 1")

    def probs(self) -> np.ndarray:
        """Action distribution at any non-terminal state."""
        base = [SoftmaxTabularPolicy(BASE_LOGITS[k]).probs(0) for k in ("rand", "right", "down")]
        return sum(w * p for w, p in zip(self.weights, base))

    def table(self, n_states: int) -> np.ndarray:
        return np.tile(self.probs(), (n_states, 1))


CASES = {
    "A": BehaviorCase("A", (1.0, 0.0, 0.0)),
    "B": BehaviorCase("B", (0.4, 0.3, 0.3)),
    "C": BehaviorCase("C", (0.2, 0.4, 0.4)),
}


def target_policy(n_states: int = 4) -> SoftmaxTabularPolicy:
    return SoftmaxTabularPolicy.from_state_logits(TARGET_LOGITS, n_states)


# ---------------------------------------------------------------------------
# One-step estimator statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GradStats:
    mean: np.ndarray
    bias: float
    variance: float
    g_true: np.ndarray
    samples: np.ndarray


def exact_grad_stats(mdp: ExactMDP, target: SoftmaxTabularPolicy, behavior, method, eval_state: int = 0) -> GradStats:
    """Mean, bias and variance of g(a) = m(rho(a), sign A) * score(s, a) * A(s, a), a ~ mu.

    The gradient is taken w.r.t. the logits of ``target`` at ``eval_state``.
    Bias is the L2 distance of the mean from the on-policy gradient, variance
    the trace of the covariance.
    """
    if isinstance(behavior, BehaviorCase):
        mu = behavior.probs()
    elif isinstance(behavior, SoftmaxTabularPolicy):
        mu = behavior.probs(eval_state)
    else:
        mu = np.asarray(behavior, dtype=float)
        if mu.ndim == 2:
            mu = mu[eval_state]
    if np.any(mu <= 0):
        raise ValueError("behavior policy must have full support at the evaluated state")
    pi = target.probs(eval_state)
    adv = solve_values(mdp, target).A[eval_state]
    rho = pi / mu
    m = np.asarray(sg.multiplier(method, rho, adv), dtype=float)
    scores = np.eye(pi.size) - pi[None, :]  # row a: one_hot(a) - pi
    g = (m * adv)[:, None] * scores
    mean = mu @ g
    g_true = pi @ (adv[:, None] * scores)
    var = float(mu @ np.sum((g - mean) ** 2, axis=1))
    return GradStats(mean, float(np.linalg.norm(mean - g_true)), var, g_true, g)


@dataclass(frozen=True)
class BiasVarPoint:
    method: str
    param: float
    bias: float
    variance: float
    on_frontier: bool = False


def pareto_flags(points: Sequence[tuple]) -> list:
    """True for each (bias, variance) pair not strictly dominated by another."""
    flags = []
    for i, (b, v) in enumerate(points):
        dominated = any(
            (b2 <= b and v2 <= v) and (b2 < b or v2 < v) for j, (b2, v2) in enumerate(points) if j != i
        )
        flags.append(not dominated)
    return flags


def default_sigma_grid(n: int = 31, lo: float = 0.05, hi: float = 50.0) -> np.ndarray:
    return np.geomspace(lo, hi, n)


def pareto_sweep(
    mdp: ExactMDP,
    target: SoftmaxTabularPolicy,
    behavior,
    sigma_grid: Iterable[float],
    eps: float = 0.2,
    tau_pos: float = 2.0,
    tau_neg: float = 1.0,
    eval_state: int = 0,
) -> list:
    """GIPO points over ``sigma_grid`` plus PPOClip, SAPO and NoClip.

    ``on_frontier`` marks points not dominated among GIPO points and the
    baselines together.
    """
    sigma_grid = list(sigma_grid)
    if not sigma_grid:
        raise ValueError("sigma grid must be nonempty")
    methods = [sg.GIPO(s) for s in sigma_grid] + [sg.PPOClip(eps), sg.SAPO(tau_pos, tau_neg), sg.NoClip()]
    raw = []
    for m in methods:
        st = exact_grad_stats(mdp, target, behavior, m, eval_state)
        raw.append((m.label, m.param, st.bias, st.variance))
    flags = pareto_flags([(b, v) for _, _, b, v in raw])
    return [BiasVarPoint(lbl, float(p), b, v, f) for (lbl, p, b, v), f in zip(raw, flags)]


def gipo_dominates(points: Sequence[BiasVarPoint], baseline: BiasVarPoint, tol: float = 1e-9) -> bool:
    """Whether some GIPO point weakly dominates ``baseline`` (within ``tol``)."""
    return any(
        p.bias <= baseline.bias + tol and p.variance <= baseline.variance + tol for p in points if p.method == "GIPO"
    )


def write_biasvar_csv(path, rows: Iterable[tuple]) -> None:
    """Write (case, BiasVarPoint) rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "method", "param", "bias", "variance", "on_frontier"])
        for case, p in rows:
            w.writerow([case, p.method, repr(p.param), repr(p.bias), repr(p.variance), int(p.on_frontier)])


def read_biasvar_csv(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.DictReader(fh), start=2):
            try:
                out.append(
                    (
                        row["case"],
                        BiasVarPoint(
                            row["method"], float(row["param"]), float(row["bias"]), float(row["variance"]),
                            bool(int(row["on_frontier"])),
                        ),
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}: malformed row {i}: {exc}") from exc
    return out

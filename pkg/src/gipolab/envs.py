"""Toy environments backed by an enumerable MDP."""

from __future__ import annotations

import numpy as np

from .oracle import ExactMDP, gridworld


class EnvError(RuntimeError):
    pass


class TabularEnv:
    """Episodic wrapper over an :class:`ExactMDP` with a time limit.

    Observations are one-hot state vectors; states are exchanged as ints.
    """

    def __init__(self, mdp: ExactMDP, max_steps: int = 50, fail_prob: float = 0.0):
        self.mdp = mdp
        self.max_steps = max_steps
        self.fail_prob = fail_prob
        self.state = mdp.initial_state
        self.t = 0

    @property
    def n_states(self) -> int:
        return self.mdp.n_states

    @property
    def n_actions(self) -> int:
        return self.mdp.n_actions

    @property
    def obs_dim(self) -> int:
        return self.mdp.n_states

    def observe(self, states) -> np.ndarray:
        return np.eye(self.mdp.n_states)[np.asarray(states, dtype=int)]

    def reset(self) -> int:
        self.state = self.mdp.initial_state
        self.t = 0
        return self.state

    def step(self, action: int, rng: np.random.Generator):
        """Returns (next_state, reward, done, truncated)."""
        if self.fail_prob and rng.random() < self.fail_prob:
            raise EnvError("injected environment failure")
        nxt, reward, done = self.mdp.step(self.state, action, rng)
        self.t += 1
        truncated = not done and self.t >= self.max_steps
        self.state = nxt
        return nxt, reward, done, truncated


def make_env(name: str = "gridworld", rows: int = 4, cols: int = 4, max_steps: int = 50, gamma: float = 0.99,
             fail_prob: float = 0.0) -> TabularEnv:
    if name != "gridworld":
        raise ValueError(f"unknown env {name!r}")
    return TabularEnv(gridworld(rows, cols, gamma), max_steps, fail_prob)

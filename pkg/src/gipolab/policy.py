"""Differentiable categorical policies.

Two families:

* :class:`SoftmaxTabularPolicy` - one logit vector per state, exact scores.
* :class:`MlpActorCritic` - tanh MLP trunk shared by a categorical policy
  head and a scalar value head, with hand-written reverse-mode gradients.

Parameter ordering for flat gradient vectors is lexicographic by
(layer, row, column): for each layer the weight matrix (row-major) is
followed by its bias. Layers are ordered trunk_0, trunk_1, ..., pi, v.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIONS = ("up", "down", "left", "right")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def categorical_entropy(logits: np.ndarray) -> np.ndarray:
    lp = log_softmax(logits)
    return -np.sum(np.exp(lp) * lp, axis=-1)


class SoftmaxTabularPolicy:
    """Per-state softmax over a fixed action set."""

    def __init__(self, logits):
        logits = np.array(logits, dtype=float)
        if logits.ndim == 1:
            logits = logits[None, :]
        if logits.ndim != 2 or not np.all(np.isfinite(logits)):
            raise ValueError("logits must be a finite (n_states, n_actions) array")
        self.logits = logits
        self.logits.setflags(write=False)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int = 4) -> "SoftmaxTabularPolicy":
        return cls(np.zeros((n_states, n_actions)))

    @classmethod
    def from_state_logits(cls, theta, n_states: int) -> "SoftmaxTabularPolicy":
        """Same logit vector ``theta`` at every state."""
        return cls(np.tile(np.asarray(theta, dtype=float), (n_states, 1)))

    @property
    def n_states(self) -> int:
        return self.logits.shape[0]

    @property
    def n_actions(self) -> int:
        return self.logits.shape[1]

    @property
    def n_params(self) -> int:
        return self.logits.size

    def _check(self, state, action=None):
        if not 0 <= state < self.n_states:
            raise IndexError(f"state {state} out of range")
        if action is not None and not 0 <= action < self.n_actions:
            raise IndexError(f"action {action} out of range")

    def probs(self, state: int | None = None) -> np.ndarray:
        if state is None:
            return softmax(self.logits)
        self._check(state)
        return softmax(self.logits[state])

    def log_prob(self, state: int, action: int) -> float:
        self._check(state, action)
        return float(log_softmax(self.logits[state])[action])

    def score(self, state: int, action: int) -> np.ndarray:
        """Gradient of log pi(a|s) w.r.t. all logits, flattened row-major."""
        self._check(state, action)
        g = np.zeros_like(self.logits)
        g[state] = -self.probs(state)
        g[state, action] += 1.0
        return g.ravel()

    def entropy(self, state: int) -> float:
        self._check(state)
        return float(categorical_entropy(self.logits[state]))

    def detached_ratio(self, behavior_logprob: float, state: int, action: int):
        """(live ratio, detached ratio) for a logged action.

        Both carry the same value. The live ratio is returned together with its
        gradient ``rho * score``; the detached one is a bare float.
        """
        if not np.isfinite(behavior_logprob):
            raise ValueError("behavior log-prob must be finite")
        rho = float(np.exp(self.log_prob(state, action) - behavior_logprob))
        return (rho, rho * self.score(state, action)), rho


# ---------------------------------------------------------------------------
# MLP actor-critic
# ---------------------------------------------------------------------------


@dataclass
class ForwardCache:
    inputs: list
    hidden: list
    logits: np.ndarray
    values: np.ndarray
    features: np.ndarray  # input to both heads


@dataclass
class MlpActorCritic:
    """Tanh MLP with categorical and value heads.

    ``params`` maps names to arrays; ``order`` fixes the flat layout.
    """

    params: dict
    order: list
    version: int = 0
    n_hidden_layers: int = field(init=False)

    def __post_init__(self):
        self.n_hidden_layers = sum(1 for k in self.order if k.startswith("trunk") and k.endswith(".W"))

    @classmethod
    def init(cls, obs_dim: int, n_actions: int, hidden=(64, 64), rng=None) -> "MlpActorCritic":
        rng = np.random.default_rng(rng)
        params, order = {}, []
        fan_in = obs_dim
        for i, width in enumerate(hidden):
            params[f"trunk{i}.W"] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, width))
            params[f"trunk{i}.b"] = np.zeros(width)
            order += [f"trunk{i}.W", f"trunk{i}.b"]
            fan_in = width
        params["pi.W"] = rng.normal(0.0, 0.01, size=(fan_in, n_actions))
        params["pi.b"] = np.zeros(n_actions)
        params["v.W"] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, 1))
        params["v.b"] = np.zeros(1)
        order += ["pi.W", "pi.b", "v.W", "v.b"]
        return cls(params=params, order=order)

    # -- flat views ---------------------------------------------------------

    @property
    def n_params(self) -> int:
        return sum(self.params[k].size for k in self.order)

    @property
    def n_actions(self) -> int:
        return self.params["pi.b"].size

    @property
    def obs_dim(self) -> int:
        first = "trunk0.W" if self.n_hidden_layers else "pi.W"
        return self.params[first].shape[0]

    def shapes(self) -> dict:
        return {k: list(self.params[k].shape) for k in self.order}

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in self.order])

    def flatten_grads(self, grads: dict) -> np.ndarray:
        return np.concatenate([np.asarray(grads[k]).ravel() for k in self.order])

    def unflatten(self, vec: np.ndarray) -> dict:
        out, i = {}, 0
        for k in self.order:
            n = self.params[k].size
            out[k] = np.asarray(vec[i : i + n], dtype=float).reshape(self.params[k].shape)
            i += n
        if i != vec.size:
            raise ValueError(f"vector length {vec.size} does not match {i} parameters")
        return out

    def with_flat(self, vec: np.ndarray, version: int | None = None) -> "MlpActorCritic":
        return MlpActorCritic(self.unflatten(vec), list(self.order), self.version if version is None else version)

    def snapshot(self) -> "MlpActorCritic":
        """Read-only copy for actors."""
        params = {k: v.copy() for k, v in self.params.items()}
        for v in params.values():
            v.setflags(write=False)
        return MlpActorCritic(params, list(self.order), self.version)

    def policy_keys(self) -> list:
        return [k for k in self.order if not k.startswith("v.")]

    # -- forward / backward -------------------------------------------------

    def forward(self, obs: np.ndarray) -> ForwardCache:
        x = np.atleast_2d(np.asarray(obs, dtype=float))
        inputs, hidden = [], []
        h = x
        for i in range(self.n_hidden_layers):
            inputs.append(h)
            h = np.tanh(h @ self.params[f"trunk{i}.W"] + self.params[f"trunk{i}.b"])
            hidden.append(h)
        logits = h @ self.params["pi.W"] + self.params["pi.b"]
        values = (h @ self.params["v.W"] + self.params["v.b"])[:, 0]
        return ForwardCache(inputs, hidden, logits, values, h)

    def backward(self, cache: ForwardCache, d_logits: np.ndarray, d_values: np.ndarray) -> dict:
        """Accumulate parameter gradients from output-side cotangents."""
        h = cache.features
        grads = {
            "pi.W": h.T @ d_logits,
            "pi.b": d_logits.sum(axis=0),
            "v.W": h.T @ d_values[:, None],
            "v.b": np.array([d_values.sum()]),
        }
        dh = d_logits @ self.params["pi.W"].T + d_values[:, None] @ self.params["v.W"].T
        for i in reversed(range(self.n_hidden_layers)):
            dz = dh * (1.0 - cache.hidden[i] ** 2)
            grads[f"trunk{i}.W"] = cache.inputs[i].T @ dz
            grads[f"trunk{i}.b"] = dz.sum(axis=0)
            if i:
                dh = dz @ self.params[f"trunk{i}.W"].T
        return grads

    def log_probs_all(self, obs: np.ndarray) -> np.ndarray:
        return log_softmax(self.forward(obs).logits)

    def log_prob(self, obs, action: int) -> float:
        lp = self.log_probs_all(obs)[0]
        if not 0 <= action < lp.size:
            raise IndexError(f"action {action} out of range")
        return float(lp[action])

    def value(self, obs) -> np.ndarray:
        return self.forward(obs).values

    def entropy(self, obs) -> float:
        return float(categorical_entropy(self.forward(obs).logits)[0])

    def score(self, obs, action: int) -> np.ndarray:
        """Flat gradient of log pi(a|obs)."""
        cache = self.forward(obs)
        p = softmax(cache.logits)
        if not 0 <= action < p.shape[1]:
            raise IndexError(f"action {action} out of range")
        d_logits = -p
        d_logits[0, action] += 1.0
        return self.flatten_grads(self.backward(cache, d_logits, np.zeros(1)))

    def detached_ratio(self, behavior_logprob: float, obs, action: int):
        if not np.isfinite(behavior_logprob):
            raise ValueError("behavior log-prob must be finite")
        rho = float(np.exp(self.log_prob(obs, action) - behavior_logprob))
        return (rho, rho * self.score(obs, action)), rho


# ---------------------------------------------------------------------------
# Checkpoints: one JSON header line, then raw little-endian float64 vectors
# ---------------------------------------------------------------------------


def write_checkpoint(path, vectors: dict, header: dict) -> None:
    """Write named flat float64 vectors after a single-line JSON header."""
    path = Path(path)
    manifest = dict(header)
    # a list, so the payload order survives sort_keys
    manifest["vectors"] = [[k, int(np.asarray(v).size)] for k, v in vectors.items()]
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
        for v in vectors.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def read_checkpoint(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        vectors = {}
        for name, n in header["vectors"]:
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise ValueError(f"truncated checkpoint at vector {name!r}")
            vectors[name] = np.frombuffer(buf, dtype="<f8").astype(float)
        if fh.read(1):
            raise ValueError("trailing bytes after the last checkpoint vector")
    return header, vectors


def save_model(path, model: MlpActorCritic, extra: dict | None = None) -> None:
    header = {"kind": "mlp_actor_critic", "order": model.order, "shapes": model.shapes(), "version": model.version}
    if extra:
        header.update(extra)
    write_checkpoint(path, {"params": model.flat()}, header)


def load_model(path) -> MlpActorCritic:
    header, vectors = read_checkpoint(path)
    params, i = {}, 0
    flat = vectors["params"]
    for k in header["order"]:
        shape = tuple(header["shapes"][k])
        n = int(np.prod(shape))
        params[k] = flat[i : i + n].reshape(shape).copy()
        i += n
    return MlpActorCritic(params, list(header["order"]), int(header["version"]))

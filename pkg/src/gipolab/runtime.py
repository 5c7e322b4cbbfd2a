"""Actor-learner pipeline and the surrogate-weighted learner update.

The learner owns the only mutable :class:`TrainState`. Actors read versioned
parameter snapshots from a :class:`SnapshotChannel` and write stamped
transitions into the shared :class:`~gipolab.replay.ReplayBuffer`.

Two schedulers drive the same components: a deterministic round-robin one
(bit-reproducible, used by tests and the acceptance runs) and a threaded one.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from . import surrogate as sg
from .config import LearnerConfig, RunConfig
from .envs import EnvError, TabularEnv, make_env
from .oracle import expected_return
from .policy import MlpActorCritic, categorical_entropy, log_softmax, read_checkpoint, softmax, write_checkpoint
from .replay import Batch, ReplayBuffer, Transition, staleness_summary
from .targets import one_step_targets

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


class TrainingAborted(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Loss and gradient
# ---------------------------------------------------------------------------


@dataclass
class LossOutput:
    total: float
    policy: float
    value: float
    entropy: float
    grad: np.ndarray
    rho: np.ndarray
    coef: np.ndarray
    mult: np.ndarray


def detached_coefficient(kind: sg.SurrogateKind, rho_detached: np.ndarray, adv: np.ndarray,
                         rho_min: float = sg.RHO_MIN, rho_max: float = sg.RHO_MAX) -> np.ndarray:
    """Per-sample factor c with multiplier m = c * rho; c carries no gradient.

    GIPO: omega(sg(rho)); NoClip: 1; PPOClip: 0/1 branch indicator;
    SAPO: m_sapo(sg(rho)) / sg(rho).
    """
    if isinstance(kind, sg.GIPO):
        return sg.gaussian_weight(rho_detached, kind.sigma, rho_min, rho_max)
    if isinstance(kind, sg.NoClip):
        return np.ones_like(rho_detached)
    if isinstance(kind, sg.PPOClip):
        return (sg.ppo_effective_multiplier(rho_detached, np.sign(adv), kind.eps) != 0).astype(float)
    if isinstance(kind, sg.SAPO):
        return sg.sapo_multiplier(rho_detached, np.sign(adv), kind.tau_pos, kind.tau_neg) / rho_detached
    raise TypeError(f"not a surrogate kind: {kind!r}")


def policy_objective(kind: sg.SurrogateKind, rho: np.ndarray, adv: np.ndarray, coef: np.ndarray) -> float:
    """Policy loss value. PPO uses its min/clip form; the rest -mean(c * rho * A)."""
    if isinstance(kind, sg.PPOClip):
        clipped = np.clip(rho, 1.0 - kind.eps, 1.0 + kind.eps)
        return float(-np.mean(np.minimum(rho * adv, clipped * adv)))
    return float(-np.mean(coef * rho * adv))


def loss_and_grad(
    model: MlpActorCritic,
    obs: np.ndarray,
    actions: np.ndarray,
    behavior_logp: np.ndarray,
    adv: np.ndarray,
    value_targets: np.ndarray,
    kind: sg.SurrogateKind,
    value_coef: float = 0.5,
    entropy_coef: float = 0.0,
    coef: np.ndarray | None = None,
    rho_min: float = sg.RHO_MIN,
    rho_max: float = sg.RHO_MAX,
) -> LossOutput:
    """Total loss L_pi + value_coef * L_v - entropy_coef * H and its flat gradient.

    ``coef`` overrides the detached per-sample factor (it is otherwise computed
    from a detached copy of the ratio).
    """
    n = actions.size
    cache = model.forward(obs)
    logp_all = log_softmax(cache.logits)
    p = np.exp(logp_all)
    rows = np.arange(n)
    log_rho = logp_all[rows, actions] - behavior_logp
    rho = np.exp(log_rho)
    if coef is None:
        coef = detached_coefficient(kind, rho.copy(), adv, rho_min, rho_max)
    mult = coef * rho

    onehot = np.zeros_like(p)
    onehot[rows, actions] = 1.0
    d_logits = -(mult * adv / n)[:, None] * (onehot - p)

    ent = categorical_entropy(cache.logits)
    if entropy_coef:
        d_logits += (entropy_coef / n) * p * (logp_all + ent[:, None])

    v_err = cache.values - value_targets
    d_values = (2.0 * value_coef / n) * v_err

    l_pi = policy_objective(kind, rho, adv, coef)
    l_v = float(np.mean(v_err ** 2))
    l_ent = float(np.mean(ent))
    total = l_pi + value_coef * l_v - entropy_coef * l_ent
    grad = model.flatten_grads(model.backward(cache, d_logits, d_values))
    return LossOutput(total, l_pi, l_v, l_ent, grad, rho, coef, mult)


# ---------------------------------------------------------------------------
# Optimizer and train state
# ---------------------------------------------------------------------------


@dataclass
class TrainState:
    model: MlpActorCritic
    adam_m: np.ndarray
    adam_v: np.ndarray
    opt_step: int = 0
    env_steps: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    @property
    def version(self) -> int:
        return self.model.version

    @classmethod
    def create(cls, model: MlpActorCritic, rng: np.random.Generator) -> "TrainState":
        z = np.zeros(model.n_params)
        return cls(model, z, z.copy(), 0, 0, rng)


def lr_vector(model: MlpActorCritic, policy_lr: float, value_lr: float) -> np.ndarray:
    """Value-head parameters use ``value_lr``; trunk and policy head ``policy_lr``."""
    return np.concatenate(
        [np.full(model.params[k].size, value_lr if k.startswith("v.") else policy_lr) for k in model.order]
    )


def adamw_step(params, grad, m, v, step, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
    """One AdamW step; returns (params, m, v) as new arrays."""
    b1, b2 = betas
    m = b1 * m + (1.0 - b1) * grad
    v = b2 * v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1 ** step)
    v_hat = v / (1.0 - b2 ** step)
    params = params - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * params)
    return params, m, v


@dataclass
class PreparedBatch:
    obs: np.ndarray
    actions: np.ndarray
    behavior_logp: np.ndarray
    adv: np.ndarray
    value_targets: np.ndarray
    gaps: np.ndarray


def prepare_batch(model: MlpActorCritic, batch: Batch, observe, cfg: LearnerConfig) -> PreparedBatch:
    """Targets and advantages for a sampled batch (one-step segments, detached values)."""
    states = batch.column("state", int)
    next_states = batch.column("next_state", int)
    actions = batch.column("action", int)
    rewards = batch.column("reward")
    done = batch.column("done", bool)
    behavior_logp = batch.column("behavior_logprob")
    obs = observe(states)
    cache = model.forward(np.concatenate([obs, observe(next_states)]))
    n = states.size
    values, next_values = cache.values[:n], cache.values[n:]
    log_rhos = log_softmax(cache.logits[:n])[np.arange(n), actions] - behavior_logp
    discounts = cfg.gamma * (~done)
    tg = one_step_targets(rewards, values, next_values, discounts, cfg.target, log_rhos, cfg.rho_bar, cfg.c_bar)
    adv = tg.advantages
    if cfg.normalize_advantages and n > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return PreparedBatch(obs, actions, behavior_logp, adv, tg.value_targets, batch.version_gaps)


def learner_update(state: TrainState, batch: Batch, cfg: LearnerConfig, observe, kind=None):
    """One learner iteration on a sampled batch.

    Returns the new state (version + 1) and a metrics dict with per-sample
    ratios, multipliers, advantages and contributions u = |m * A|.
    """
    kind = kind or cfg.surrogate.build()
    pb = prepare_batch(state.model, batch, observe, cfg)
    out = loss_and_grad(
        state.model, pb.obs, pb.actions, pb.behavior_logp, pb.adv, pb.value_targets, kind,
        cfg.value_coef, cfg.entropy_coef, rho_min=cfg.rho_min, rho_max=cfg.rho_max,
    )
    if not (np.isfinite(out.total) and np.all(np.isfinite(out.grad))):
        dump = {
            "version": state.version,
            "loss": [out.total, out.policy, out.value, out.entropy],
            "rho": out.rho.tolist(),
            "adv": pb.adv.tolist(),
            "actions": pb.actions.tolist(),
        }
        raise NonFiniteLossError(f"non-finite loss at version {state.version}", dump)
    grad = out.grad
    if cfg.max_grad_norm is not None:
        norm = np.linalg.norm(grad)
        if norm > cfg.max_grad_norm:
            grad = grad * (cfg.max_grad_norm / norm)
    step = state.opt_step + 1
    lr = lr_vector(state.model, cfg.policy_lr, cfg.value_lr)
    params, m, v = adamw_step(state.model.flat(), grad, state.adam_m, state.adam_v, step, lr,
                              cfg.betas, cfg.adam_eps, cfg.weight_decay)
    new_state = TrainState(state.model.with_flat(params, state.version + 1), m, v, step, state.env_steps, state.rng)
    metrics = {
        "loss": out.total,
        "policy_loss": out.policy,
        "value_loss": out.value,
        "entropy": out.entropy,
        "rho": out.rho,
        "mult": out.mult,
        "adv": pb.adv,
        "u": np.abs(out.mult * pb.adv),
        "gaps": pb.gaps,
    }
    return new_state, metrics


# ---------------------------------------------------------------------------
# Actors
# ---------------------------------------------------------------------------


class SnapshotChannel:
    """Latest read-only parameter snapshot, swapped atomically."""

    def __init__(self, model: MlpActorCritic):
        self._lock = threading.Lock()
        self._snap = model.snapshot()

    def publish(self, model: MlpActorCritic) -> None:
        snap = model.snapshot()
        with self._lock:
            self._snap = snap

    def latest(self) -> MlpActorCritic:
        with self._lock:
            return self._snap


class Actor:
    """Rolls fixed-length segments with the latest snapshot and appends them."""

    def __init__(self, actor_id: int, env: TabularEnv, buffer: ReplayBuffer, channel: SnapshotChannel,
                 segment_length: int, rng: np.random.Generator):
        self.actor_id = actor_id
        self.env = env
        self.buffer = buffer
        self.channel = channel
        self.segment_length = segment_length
        self.rng = rng
        self.env_steps = 0
        self.failures = 0
        self._table_version = None
        self._logp_table = None
        self.state = env.reset()

    def _policy_table(self, snap: MlpActorCritic) -> np.ndarray:
        if self._table_version != snap.version:
            self._logp_table = snap.log_probs_all(self.env.observe(np.arange(self.env.n_states)))
            self._table_version = snap.version
        return self._logp_table

    def run_segment(self) -> list:
        snap = self.channel.latest()
        logp = self._policy_table(snap)
        out = []
        for _ in range(self.segment_length):
            s = self.state
            a = int(self.rng.choice(self.env.n_actions, p=np.exp(logp[s])))
            try:
                nxt, r, done, truncated = self.env.step(a, self.rng)
            except EnvError as exc:
                self.failures += 1
                log.warning("actor %d: env failure (%s); restarting episode", self.actor_id, exc)
                self.state = self.env.reset()
                continue
            out.append(Transition(s, a, r, nxt, done, float(logp[s, a]), snap.version, truncated))
            self.env_steps += 1
            self.state = self.env.reset() if (done or truncated) else nxt
        self.buffer.extend(out)
        return out


def actor_loop(actor: Actor, stop: threading.Event) -> None:
    while not stop.is_set():
        actor.run_segment()


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def build_id() -> str:
    """Content hash of the package sources."""
    h = hashlib.sha1()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:12]


def policy_table(model: MlpActorCritic, env: TabularEnv) -> np.ndarray:
    return softmax(model.forward(env.observe(np.arange(env.n_states))).logits)


@dataclass
class RunResult:
    out_dir: Path
    rows: list
    state: TrainState
    status: str
    env_steps: int


def _row(state: TrainState, metrics: dict, kind, cfg: RunConfig, env: TabularEnv, gamma: float) -> dict:
    old_frac, gap95 = staleness_summary(metrics["gaps"], cfg.regime.t_old)
    rep = dg.utilization(metrics["mult"], metrics["adv"], metrics["gaps"], t_old=cfg.regime.t_old,
                         ratios=metrics["rho"])
    rho = metrics["rho"]
    return {
        "step": state.version,
        "env_steps": state.env_steps,
        "method": kind.label,
        "sigma": kind.sigma if isinstance(kind, sg.GIPO) else None,
        "old_frac": old_frac,
        "old_gap_p95": gap95,
        "d95": rep.d95,
        "dead_frac": rep.dead_frac,
        "suppressed_frac": rep.suppressed_frac,
        "near_zero_frac": rep.near_zero_frac,
        "share_old": rep.share_old,
        "ess_old_norm": rep.ess_old_normalized,
        "kl_to_behavior": float(np.mean(rho - 1.0 - np.log(rho))),
        "avg_return": expected_return(env.mdp, policy_table(state.model, env)),
    }


def state_rng_streams(seed: int, n_actors: int):
    ss = np.random.SeedSequence(seed)
    init_ss, learner_ss, *actor_ss = ss.spawn(2 + n_actors)
    return (np.random.default_rng(init_ss), np.random.default_rng(learner_ss),
            [np.random.default_rng(s) for s in actor_ss])


def save_state(path, state: TrainState, extra: dict | None = None) -> None:
    header = {
        "kind": "train_state",
        "order": state.model.order,
        "shapes": state.model.shapes(),
        "version": state.version,
        "opt_step": state.opt_step,
        "env_steps": state.env_steps,
        "rng": state.rng.bit_generator.state,
    }
    if extra:
        header.update(extra)
    write_checkpoint(path, {"params": state.model.flat(), "adam_m": state.adam_m, "adam_v": state.adam_v}, header)


def load_state(path) -> TrainState:
    header, vec = read_checkpoint(path)
    params, i = {}, 0
    for k in header["order"]:
        shape = tuple(header["shapes"][k])
        n = int(np.prod(shape))
        params[k] = vec["params"][i : i + n].reshape(shape).copy()
        i += n
    model = MlpActorCritic(params, list(header["order"]), int(header["version"]))
    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng"]
    return TrainState(model, vec["adam_m"].copy(), vec["adam_v"].copy(), int(header["opt_step"]),
                      int(header["env_steps"]), rng)


def train(cfg: RunConfig, seed: int, out_dir=None, env: TabularEnv | None = None, on_update=None) -> RunResult:
    """Run actors and learner for ``cfg.learner.iterations`` updates.

    Writes ``metrics.csv``, ``manifest.json`` and checkpoints under ``out_dir``.
    ``on_update(state, metrics)``, if given, is called after every learner
    update with the new state and the per-sample metrics.
    On an abort the partial artifacts are kept, the manifest records the
    error, and :class:`TrainingAborted` is raised.
    """
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    lc, rc = cfg.learner, cfg.regime
    kind = lc.surrogate.build()
    env = env or make_env(cfg.env.name, cfg.env.rows, cfg.env.cols, cfg.env.max_steps, lc.gamma)
    init_rng, learner_rng, actor_rngs = state_rng_streams(seed, rc.num_actors)
    model = MlpActorCritic.init(env.obs_dim, env.n_actions, lc.hidden, init_rng)
    state = TrainState.create(model, learner_rng)
    buffer = ReplayBuffer(rc.replay_capacity)
    channel = SnapshotChannel(model)
    actors = [
        Actor(i, make_env(cfg.env.name, cfg.env.rows, cfg.env.cols, cfg.env.max_steps, lc.gamma, env.fail_prob),
              buffer, channel, rc.segment_length, actor_rngs[i])
        for i in range(rc.num_actors)
    ]
    min_fill = max(lc.min_buffer, 1)
    manifest = {
        "seed": seed,
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "build_id": build_id(),
        "start_env_steps": 0,
        "status": "running",
    }
    rows = []
    status, error = "completed", None
    stop = threading.Event()
    threads = []
    writer = dg.MetricWriter(out / "metrics.csv")

    def one_update():
        nonlocal state
        state.env_steps = sum(a.env_steps for a in actors)
        batch = buffer.sample_uniform(lc.batch_size, state.version, state.rng)
        state, metrics = learner_update(state, batch, lc, env.observe, kind)
        state.env_steps = sum(a.env_steps for a in actors)
        if on_update is not None:
            on_update(state, metrics)
        channel.publish(state.model)
        if state.version % cfg.log_every == 0 or state.version == lc.iterations:
            row = _row(state, metrics, kind, cfg, env, lc.gamma)
            rows.append(row)
            writer.write(row)
        if cfg.checkpoint_every and state.version % cfg.checkpoint_every == 0:
            save_state(out / f"ckpt_{state.version:07d}.bin", state)

    try:
        if rc.mode == "deterministic":
            while state.version < lc.iterations:
                for actor in actors:
                    actor.run_segment()
                if len(buffer) < min_fill:
                    continue
                for _ in range(rc.updates_per_tick):
                    if state.version >= lc.iterations:
                        break
                    one_update()
        else:
            threads = [threading.Thread(target=actor_loop, args=(a, stop), daemon=True) for a in actors]
            for t in threads:
                t.start()
            while state.version < lc.iterations:
                if len(buffer) < min_fill:
                    stop.wait(0.001)
                    continue
                one_update()
    except Exception as exc:  # noqa: BLE001 - every abort path preserves artifacts
        status, error = "aborted", f"{type(exc).__name__}: {exc}"
        if isinstance(exc, NonFiniteLossError):
            (out / "diagnostic_dump.json").write_text(json.dumps(exc.dump))
        log.error("training aborted: %s", error)
    finally:
        stop.set()
        for t in threads:
            t.join()
        writer.close()
    state.env_steps = sum(a.env_steps for a in actors)
    save_state(out / "final.bin", state, {"seed": seed})
    manifest.update(
        status=status,
        error=error,
        end_env_steps=state.env_steps,
        final_version=state.version,
        actor_failures=sum(a.failures for a in actors),
    )
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    if status != "completed":
        raise TrainingAborted(error)
    return RunResult(out, rows, state, status, state.env_steps)

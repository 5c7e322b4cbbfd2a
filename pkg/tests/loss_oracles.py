"""Frozen-batch construction and finite-difference checks for the learner loss."""

import numpy as np

from gipolab import surrogate as sg
from gipolab.policy import MlpActorCritic
from gipolab.runtime import detached_coefficient, loss_and_grad

KINDS = (sg.GIPO(1.0), sg.PPOClip(0.2), sg.SAPO(), sg.NoClip())
BOUNDARY_MARGIN = 1e-3


def frozen_batch(rng, kind, n=16, obs_dim=5, hidden=(8, 8)):
    """Random model and batch; PPO samples within the margin of a clip edge are redrawn."""
    model = MlpActorCritic.init(obs_dim, 4, hidden, rng)
    obs = rng.normal(size=(n, obs_dim))
    actions = rng.integers(0, 4, size=n)
    adv = rng.normal(size=n)
    targets = rng.normal(size=n)
    logp = model.log_probs_all(obs)[np.arange(n), actions]
    blp = logp - rng.normal(0, 0.4, size=n)
    if isinstance(kind, sg.PPOClip):
        for _ in range(100):
            rho = np.exp(logp - blp)
            near = (np.abs(rho - (1 - kind.eps)) < BOUNDARY_MARGIN) | (np.abs(rho - (1 + kind.eps)) < BOUNDARY_MARGIN)
            if not near.any():
                break
            blp[near] = logp[near] - rng.normal(0, 0.4, size=int(near.sum()))
    return model, obs, actions, blp, adv, targets


def fd_relative_error(kind, model, obs, actions, blp, adv, targets, value_coef=0.5, entropy_coef=0.01, h=1e-5):
    """max |analytic - central FD| / max |FD| for the total loss, detached factor held fixed."""
    out = loss_and_grad(model, obs, actions, blp, adv, targets, kind, value_coef, entropy_coef)
    coef = out.coef.copy()
    base = model.flat()
    fd = np.empty_like(base)
    for i in range(base.size):
        vals = []
        for sgn in (1.0, -1.0):
            x = base.copy()
            x[i] += sgn * h
            m = model.with_flat(x)
            vals.append(loss_and_grad(m, obs, actions, blp, adv, targets, kind, value_coef, entropy_coef,
                                      coef=coef).total)
        fd[i] = (vals[0] - vals[1]) / (2 * h)
    return float(np.max(np.abs(out.grad - fd)) / max(np.max(np.abs(fd)), 1e-12))


def stop_gradient_equal(model, obs, actions, blp, adv, targets, sigma=1.0):
    """Gradient with the weight detached internally vs. the weight passed in as a plain number."""
    internal = loss_and_grad(model, obs, actions, blp, adv, targets, sg.GIPO(sigma))
    live_rho = np.exp(model.log_probs_all(obs)[np.arange(actions.size), actions] - blp)
    omega = detached_coefficient(sg.GIPO(sigma), live_rho, adv)
    substituted = loss_and_grad(model, obs, actions, blp, adv, targets, sg.GIPO(sigma), coef=omega)
    return np.array_equal(internal.grad, substituted.grad) and internal.total == substituted.total

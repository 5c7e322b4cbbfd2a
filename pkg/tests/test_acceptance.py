"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The training-based criteria (8-10) share one set of toy runs built from the
shipped configs in ``configs/``.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from gipolab import oracle, verify
from gipolab import surrogate as sg
from gipolab.config import load_config
from gipolab.diagnostics import utilization, window_mean
from gipolab.runtime import train
from gipolab.targets import gae, vtrace
from loss_oracles import KINDS, fd_relative_error, frozen_batch, stop_gradient_equal
from target_oracles import gae_direct, random_segment, vtrace_direct

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SEEDS = (0, 1, 2, 3, 4)
SIGMAS = (0.25, 0.5, 1.0, 2.0)


@pytest.fixture(scope="module")
def ratio_grid():
    return verify.ratio_grid(10**6)


@pytest.mark.criterion("1")
@pytest.mark.parametrize("sigma", SIGMAS)
def test_c1_multiplier_peak(criterion, ratio_grid, sigma):
    t0 = time.perf_counter()
    mx, arg, bound = verify.multiplier_max_on_grid(sigma, ratio_grid)
    elapsed = time.perf_counter() - t0
    step = math.log(ratio_grid[1] / ratio_grid[0])
    gap = bound - mx
    at_peak = abs(math.log(arg) - sigma * sigma) <= step
    ok = mx <= bound * (1 + 1e-15) and gap <= 1e-9 and at_peak and elapsed < 1.0
    criterion(f"1 (sigma={sigma:g})", ok,
              f"max omega*rho = {mx:.12f}, bound {bound:.12f}, gap {gap:.2e} (tol 1e-9); "
              f"argmax log-distance {abs(math.log(arg) - sigma * sigma):.1e} (grid step {step:.1e}); {elapsed:.3f}s")
    assert ok


@pytest.mark.criterion("2")
def test_c2_log_symmetry(criterion, ratio_grid):
    err = max(float(np.max(np.abs(sg.gaussian_weight(ratio_grid, s) - sg.gaussian_weight(1 / ratio_grid, s))))
              for s in SIGMAS)
    ok = err <= 1e-12
    criterion("2", ok, f"max |w(r) - w(1/r)| = {err:.2e} over 10^6 ratios x {len(SIGMAS)} sigmas")
    assert ok


@pytest.mark.criterion("3")
def test_c3_gridworld_study(criterion):
    t0 = time.perf_counter()
    mdp = oracle.gridworld_2x2()
    target = oracle.target_policy()
    grid = oracle.default_sigma_grid(31, 0.05, 50.0)
    sweeps = {c: oracle.pareto_sweep(mdp, target, oracle.CASES[c], grid) for c in "ABC"}
    elapsed = time.perf_counter() - t0
    by = {c: {p.method: p for p in pts if p.method != "GIPO"} for c, pts in sweeps.items()}
    noclip = max(by[c]["NoClip"].bias for c in "ABC")
    ppo_var = max(by[c]["PPOClip"].variance for c in "AB")
    dominated = all(oracle.gipo_dominates(sweeps[c], by[c][m], 1e-9) for c in "ABC" for m in ("PPOClip", "SAPO"))
    gipo = {c: [p for p in sweeps[c] if p.method == "GIPO"] for c in "ABC"}
    ordered = all(gipo["C"][i].bias <= gipo["B"][i].bias <= gipo["A"][i].bias for i in range(len(grid)))
    checks = {"a": noclip < 1e-12, "b": ppo_var < 1e-9, "c": dominated, "d": ordered, "runtime": elapsed < 10}
    ok = all(checks.values())
    criterion("3", ok, f"(a) NoClip bias max {noclip:.1e}; (b) PPO var A/B max {ppo_var:.1e}; "
                       f"(c) GIPO dominates PPO and SAPO in A,B,C: {dominated}; (d) bias C<=B<=A at all "
                       f"{len(grid)} sigmas: {ordered}; {elapsed:.2f}s")
    assert ok


@pytest.mark.criterion("4")
@pytest.mark.parametrize("kind", KINDS, ids=lambda k: k.label)
def test_c4_gradient_correctness(criterion, kind):
    rng = np.random.default_rng(1234)
    worst = max(fd_relative_error(kind, *frozen_batch(rng, kind)) for _ in range(50))
    ok = worst < 1e-4
    criterion(f"4 ({kind.label})", ok, f"worst relative error over 50 frozen batches {worst:.2e} (tol 1e-4)")
    assert ok


@pytest.mark.criterion("5")
def test_c5_stop_gradient(criterion):
    rng = np.random.default_rng(99)
    results = [stop_gradient_equal(*frozen_batch(rng, sg.GIPO(s)), sigma=s) for s in (0.3, 1.0, 3.0) for _ in range(10)]
    ok = all(results)
    criterion("5", ok, f"{sum(results)}/{len(results)} batches bitwise-equal")
    assert ok


@pytest.mark.criterion("6")
def test_c6_hoeffding(criterion):
    t0 = time.perf_counter()
    parts, ok = [], True
    for i, n in enumerate((100, 1000)):
        for j, alpha in enumerate((0.05, 0.01)):
            rate, p = verify.hoeffding_violation_rate(n, alpha, 10_000, seed=10 * i + j)
            ok &= rate <= alpha and p >= 1e-3
            parts.append(f"N={n} alpha={alpha:g}: rate {rate:.4f} (p={p:.2f})")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 30
    criterion("6", ok, "; ".join(parts) + f"; {elapsed:.1f}s")
    assert ok


@pytest.mark.criterion("7")
def test_c7_attenuation_enumeration(criterion):
    att = verify.check_attenuation_bound(n_pairs=1000, n_tau=20, seed=7)
    tau = verify.check_optimal_tau()
    ok = att.passed and tau.passed
    criterion("7", ok, f"{att.detail}; {tau.detail}")
    assert ok


@pytest.mark.criterion("11")
def test_c11_target_oracles(criterion):
    rng = np.random.default_rng(11)
    worst_gae = worst_vt = 0.0
    for _ in range(1000):
        r, v, lr, d = random_segment(rng, 10)
        lam = float(rng.uniform())
        adv, tgt = gae_direct(r, v, 0.99, lam, d)
        out = gae(r, v, 0.99, lam, d)
        worst_gae = max(worst_gae, np.max(np.abs(out.advantages - adv)), np.max(np.abs(out.value_targets - tgt)))
        cb = float(rng.uniform(0.5, 1.5))
        rb = cb + float(rng.uniform(0.0, 1.0))
        adv, vs = vtrace_direct(r, v, lr, 0.99, rb, cb, d)
        out = vtrace(r, v, lr, 0.99, rb, cb, d)
        worst_vt = max(worst_vt, np.max(np.abs(out.advantages - adv)), np.max(np.abs(out.value_targets - vs)))
    ok = worst_gae < 1e-12 and worst_vt < 1e-12
    criterion("11", ok, f"1000 segments: GAE max error {worst_gae:.1e}, V-trace max error {worst_vt:.1e} (tol 1e-12)")
    assert ok


# ---------------------------------------------------------------------------
# Toy training runs shared by criteria 8-10
# ---------------------------------------------------------------------------


def _windowed(rows, key):
    pts = [(r["env_steps"], r[key]) for r in rows if r[key] is not None]
    return window_mean(*zip(*pts))


def _run(cfg, seed, out, keep_batches):
    batches = []

    def record(state, metrics):
        if keep_batches:
            batches.append((state.env_steps, metrics["rho"].copy(), metrics["adv"].copy(), metrics["gaps"].copy()))

    t0 = time.perf_counter()
    res = train(cfg, seed, out, on_update=record)
    elapsed = time.perf_counter() - t0
    if batches:
        cut = 0.8 * max(b[0] for b in batches)
        batches = [b[1:] for b in batches if b[0] >= cut]
    summary = {k: _windowed(res.rows, k) for k in ("old_frac", "d95", "avg_return", "near_zero_frac")}
    return summary, batches, elapsed


@pytest.fixture(scope="module")
def toy_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    fresh = load_config(CONFIGS / "toy_fresh.yaml")
    stale = load_config(CONFIGS / "toy_stale.yaml")
    ppo = stale.model_copy(update={"learner": stale.learner.model_copy(update={
        "surrogate": stale.learner.surrogate.model_copy(update={"kind": "ppo_clip", "eps": 0.2})})})
    runs, times = {}, {"fresh_gipo": 0.0, "stale_gipo": 0.0, "stale_ppo": 0.0}
    for seed in SEEDS:
        for name, cfg in (("fresh_gipo", fresh), ("stale_gipo", stale), ("stale_ppo", ppo)):
            summary, batches, dt = _run(cfg, seed, root / f"{name}_{seed}", keep_batches=name.startswith("stale"))
            runs[name, seed] = (summary, batches)
            times[name] += dt
    return runs, times


@pytest.mark.criterion("8")
def test_c8_regime_separation(criterion, toy_runs):
    runs, times = toy_runs
    mean = lambda name, key: float(np.mean([runs[name, s][0][key] for s in SEEDS]))
    fresh_old, stale_old = mean("fresh_gipo", "old_frac"), mean("stale_gipo", "old_frac")
    fresh_d, stale_d = mean("fresh_gipo", "d95"), mean("stale_gipo", "d95")
    runtime = times["fresh_gipo"] + times["stale_gipo"]
    ok = stale_old > 0.5 and fresh_old < 0.01 and stale_d > fresh_d and runtime < 300
    criterion("8", ok, f"final-window OldFrac stale {stale_old:.3f} / fresh {fresh_old:.3f}; "
                       f"D0.95 stale {stale_d:.3f} > fresh {fresh_d:.3f}; {runtime:.0f}s for {len(SEEDS)} seeds")
    assert ok


@pytest.mark.criterion("9")
def test_c9_utilization_ordering(criterion, toy_runs):
    runs, _ = toy_runs
    ppo_kind, gipo_kind = sg.PPOClip(0.2), sg.GIPO(1.0)
    per_seed = []
    for s in SEEDS:
        batches = runs["stale_gipo", s][1] + runs["stale_ppo", s][1]
        nz_ppo, nz_gipo, mixed = [], [], True
        for rho, adv, gaps in batches:
            mixed &= bool((adv > 0).any() and (adv < 0).any())
            nz_ppo.append(utilization(sg.multiplier(ppo_kind, rho, adv), adv, gaps).near_zero_frac)
            nz_gipo.append(utilization(sg.multiplier(gipo_kind, rho, adv), adv, gaps).near_zero_frac)
        per_seed.append((float(np.mean(nz_ppo)), float(np.mean(nz_gipo)), mixed))
    ok = all(p > g and m for p, g, m in per_seed)
    criterion("9", ok, "near_zero_frac PPO vs GIPO per seed: "
                       + ", ".join(f"{p:.3f}>{g:.3f}" if p > g else f"{p:.3f}<={g:.3f}" for p, g, _ in per_seed))
    assert ok


@pytest.mark.criterion("10")
def test_c10_directional_learning(criterion, toy_runs):
    runs, times = toy_runs
    pairs = [(runs["stale_gipo", s][0]["avg_return"], runs["stale_ppo", s][0]["avg_return"]) for s in SEEDS]
    wins = sum(g >= p for g, p in pairs)
    runtime = times["stale_gipo"] + times["stale_ppo"]
    ok = wins >= 4 and runtime < 1800
    criterion("10", ok, f"GIPO >= PPO in {wins}/5 seeds ("
                        + ", ".join(f"{g:.3f} vs {p:.3f}" for g, p in pairs) + f"); {runtime:.0f}s")
    assert ok

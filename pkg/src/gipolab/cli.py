"""Command-line entry point: train, biasvar, sweep, plot, verify."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import oracle, plotting, verify
from .config import ConfigError, RunConfig, load_config
from .diagnostics import read_metrics, window_mean
from .runtime import TrainingAborted, train

OUT_ENV = "GIPOLAB_OUT"

log = logging.getLogger("gipolab")


def _out_dir(arg, default) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or default)


def _sigma_grid(text: str | None) -> np.ndarray:
    """Either comma-separated values or lo:hi:n (log-spaced)."""
    if not text:
        return oracle.default_sigma_grid()
    if ":" in text:
        lo, hi, n = text.split(":")
        return np.geomspace(float(lo), float(hi), int(n))
    return np.array([float(x) for x in text.split(",") if x.strip()])


def cmd_train(args) -> int:
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = _out_dir(args.out, cfg.output_dir)
    seeds = [args.seed] if args.seed is not None else list(cfg.seeds)
    status = 0
    for seed in seeds:
        run_dir = out / f"seed_{seed}"
        try:
            res = train(cfg, seed, run_dir)
        except TrainingAborted as exc:
            print(f"seed {seed}: aborted ({exc}); partial artifacts in {run_dir}", file=sys.stderr)
            status = 1
            continue
        plotting.learning_curves([run_dir / "metrics.csv"], run_dir / "learning_curves.svg")
        last = res.rows[-1] if res.rows else {}
        print(f"seed {seed}: {res.state.version} updates, {res.env_steps} env steps, "
              f"final return {last.get('avg_return', float('nan')):.4f} -> {run_dir}")
    return status


def run_biasvar(cases, sigma_grid, out: Path, eps=0.2, tau_pos=2.0, tau_neg=1.0) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    mdp = oracle.gridworld_2x2()
    target = oracle.target_policy(mdp.n_states)
    rows, result = [], {}
    for case in cases:
        pts = oracle.pareto_sweep(mdp, target, oracle.CASES[case], sigma_grid, eps, tau_pos, tau_neg)
        result[case] = pts
        rows += [(case, p) for p in pts]
    oracle.write_biasvar_csv(out / "biasvar.csv", rows)
    plotting.biasvar_pareto(out / "biasvar.csv", out / "biasvar_pareto.svg")
    return result


def cmd_biasvar(args) -> int:
    cases = ["A", "B", "C"] if args.case in (None, "all") else [args.case.upper()]
    for c in cases:
        if c not in oracle.CASES:
            print(f"error: unknown case {c!r} (expected A, B or C)", file=sys.stderr)
            return 2
    out = _out_dir(args.out, "runs/biasvar")
    result = run_biasvar(cases, _sigma_grid(args.sigma_grid), out)
    for case, pts in result.items():
        for p in pts:
            if p.method != "GIPO":
                print(f"case {case} {p.method:8s} bias={p.bias:.3e} var={p.variance:.3e} "
                      f"dominated_by_gipo={oracle.gipo_dominates(pts, p)}")
    print(f"wrote {out / 'biasvar.csv'} and {out / 'biasvar_pareto.svg'}")
    return 0


SWEEP_COLUMNS = ("regime", "sigma", "seed", "d95", "ess_old_norm", "avg_return", "old_frac")


def cmd_sweep(args) -> int:
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = _out_dir(args.out, Path(cfg.output_dir) / "sweep")
    sigmas = _sigma_grid(args.sigma_grid) if args.sigma_grid else [0.5, 1.0, 2.0]
    seeds = [args.seed] if args.seed is not None else list(cfg.seeds)
    regimes = {"fresh": 16, "stale": 2}
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for regime, n_actors in regimes.items():
            for s in sigmas:
                for seed in seeds:
                    run_cfg = cfg.model_copy(update={
                        "regime": cfg.regime.model_copy(update={"num_actors": n_actors}),
                        "learner": cfg.learner.model_copy(update={
                            "surrogate": cfg.learner.surrogate.model_copy(update={"kind": "gipo", "sigma": float(s)})
                        }),
                    })
                    run_dir = out / f"{regime}_sigma{s:g}_seed{seed}"
                    try:
                        train(run_cfg, seed, run_dir)
                    except TrainingAborted as exc:
                        print(f"{run_dir.name}: aborted ({exc})", file=sys.stderr)
                        return 1
                    rows = read_metrics(run_dir / "metrics.csv")
                    steps = [r["env_steps"] for r in rows]

                    def wm(key):
                        pts = [(st, r[key]) for st, r in zip(steps, rows) if r[key] is not None]
                        return window_mean(*zip(*pts)) if pts else float("nan")

                    w.writerow([regime, repr(float(s)), seed, repr(wm("d95")), repr(wm("ess_old_norm")),
                                repr(wm("avg_return")), repr(wm("old_frac"))])
    plotting.sigma_sensitivity(out / "sweep.csv", out / "sigma_sensitivity.svg")
    print(f"wrote {out / 'sweep.csv'} and {out / 'sigma_sensitivity.svg'}")
    return 0


def cmd_plot(args) -> int:
    out = Path(args.output) if args.output else _out_dir(args.out, "runs/plots") / f"{args.kind}.svg"
    params = {}
    if args.kind == "weight_curves":
        params = {"sigma": args.sigma, "eps": args.eps}
    try:
        path = plotting.render(args.kind, args.inputs, out, **params)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {path}")
    return 0


def cmd_verify(args) -> int:
    results = verify.run_all(sigma=args.sigma, quick=args.quick)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gipolab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run the actor-learner pipeline from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.set_defaults(fn=cmd_train)

    b = sub.add_parser("biasvar", help="exact bias-variance study on the 2x2 GridWorld")
    b.add_argument("--case", default="all", help="A, B, C or all")
    b.add_argument("--sigma-grid", help="comma list or lo:hi:n (log-spaced)")
    b.add_argument("--out")
    b.set_defaults(fn=cmd_biasvar)

    s = sub.add_parser("sweep", help="GIPO sigma sensitivity under fresh and stale regimes")
    s.add_argument("--config", required=True)
    s.add_argument("--sigma-grid")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_sweep)

    pl = sub.add_parser("plot", help="render a figure from CSV inputs")
    pl.add_argument("kind", choices=plotting.PLOT_KINDS)
    pl.add_argument("inputs", nargs="*")
    pl.add_argument("-o", "--output", help="output SVG path")
    pl.add_argument("--out", help="output directory (file named after the kind)")
    pl.add_argument("--sigma", type=float, default=1.0)
    pl.add_argument("--eps", type=float, default=0.2)
    pl.set_defaults(fn=cmd_plot)

    v = sub.add_parser("verify", help="run the bound-check battery")
    v.add_argument("--sigma", type=float, help="extra sigma to validate first")
    v.add_argument("--quick", action="store_true", help="smaller grids and fewer batches")
    v.set_defaults(fn=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``spikebench run | check-gradients | check-lemma``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import diagnostics
from .gradcheck import gradient_check_suite
from .harness import ExperimentConfig, desk_profile, paper_profile, run_experiment
from .operators import FourierOperator, FourierOperatorConfig, MultiPlanePSFConfig, MultiPlanePSFOperator


def parse_seeds(text: str) -> list[int]:
    """Accept ``0..9`` (inclusive), ``3`` or ``0,2,5``."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in text.split(",") if s.strip()]


def cmd_run(args) -> int:
    base = paper_profile() if args.paper_scale else desk_profile()
    cfg = ExperimentConfig.from_file(args.config, base) if args.config else base
    overrides = {}
    if args.seeds:
        overrides["seeds"] = parse_seeds(args.seeds)
    if args.out:
        overrides["output_dir"] = args.out
    if args.methods:
        overrides["methods"] = args.methods.split(",")
    if overrides:
        cfg = ExperimentConfig.from_mapping(overrides, cfg)
    result = run_experiment(cfg)
    for s in result.seeds:
        for method, rec in s.runs.items():
            m = rec.metrics
            print(
                f"seed {s.seed:>3} {method}: {rec.status:<16} t={rec.wall_time:8.3f}s "
                f"residual={rec.trace[-1].residual_norm_squared:.3e} spikes={len(rec.outcome.train)} "
                f"J={m.jaccard:.3f} P={m.precision:.3f} R={m.recall:.3f}"
            )
        if s.speedup is not None:
            print(f"seed {s.seed:>3} speedup pgd/bcd = {s.speedup:.3f}")
    red = result.median_time_reduction()
    if red is not None:
        print(f"median wall-time reduction of BCD vs PGD: {100 * red:.1f}% (reference value reported for MA-TIRF: 35%)")
        print(f"median block-gradient reduction of BCD vs PGD: {100 * result.median_gradient_reduction():.1f}%")
    print(f"outputs written to {result.output_dir}")
    return 0


def cmd_check_gradients(args) -> int:
    rows = gradient_check_suite(args.instances, seed=args.seed)
    worst = 0.0
    for name, err in rows:
        print(f"{name:<20} max relative error {err:.3e}")
        worst = max(worst, err)
    ok = worst < 1e-5
    print("PASS" if ok else "FAIL", f"(tolerance 1e-5, worst {worst:.3e})")
    return 0 if ok else 1


def cmd_check_lemma(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.operator == "fourier":
        op = FourierOperator.from_config(FourierOperatorConfig(m=256, d=2, seed=args.seed))
        eps = 0.3
    else:
        op = MultiPlanePSFOperator(MultiPlanePSFConfig(grid=(32, 32)))
        eps = 8.0 * min(op.config.pixel_size)
    est = diagnostics.estimate_mu(op, eps, args.trials, seed=args.seed)
    failures = 0
    for inst in range(args.instances):
        K = int(rng.integers(1, args.max_k + 1))
        truth, init = diagnostics.random_well_initialized(op, K, eps, rng)
        for label, mu in (("sampled", max(est.mu, 0.0)), ("instance", diagnostics.instance_mu(op, truth, init))):
            rep = diagnostics.check_energy_bound(op, truth, init, mu)
            record = {"check": "energy", "mu_source": label, "lhs": rep.lhs, "rhs": rep.rhs, "mu": mu,
                      "K": K, "seed": args.seed, "instance": inst, "holds": rep.holds}
            print(json.dumps(record))
            failures += label == "instance" and not rep.holds
            for i in range(K):
                for r in range(op.d):
                    rep = diagnostics.check_gradient_bound(op, truth, init, mu, i, r)
                    record = {"check": "gradient", "mu_source": label, "i": i, "r": r, "lhs": rep.lhs,
                              "rhs": rep.rhs, "mu": mu, "K": K, "seed": args.seed, "instance": inst,
                              "holds": rep.holds}
                    print(json.dumps(record))
                    failures += label == "instance" and not rep.holds
    print(json.dumps({"sampled_mu": est.mu, "trials": est.trials, "epsilon": eps,
                      "max_imag_ratio": est.max_imag_ratio, "instance_mu_failures": failures}))
    return 0 if failures == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikebench", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="PGD vs BCD benchmark")
    run.add_argument("--config", help="TOML or JSON experiment config")
    run.add_argument("--paper-scale", action="store_true", help="K=50, 64x64x4, seeds 0..9")
    run.add_argument("--seeds", help="e.g. 0..9 or 0,3,7")
    run.add_argument("--out", help="output directory")
    run.add_argument("--methods", help="comma separated subset of pgd,bcd")
    run.set_defaults(func=cmd_run)

    grad = sub.add_parser("check-gradients", help="analytic vs finite-difference gradients")
    grad.add_argument("--instances", type=int, default=100)
    grad.add_argument("--seed", type=int, default=0)
    grad.set_defaults(func=cmd_check_gradients)

    lemma = sub.add_parser("check-lemma", help="dipole energy and gradient bounds")
    lemma.add_argument("--trials", type=int, default=1000)
    lemma.add_argument("--instances", type=int, default=20)
    lemma.add_argument("--max-k", type=int, default=3)
    lemma.add_argument("--operator", choices=("psf", "fourier"), default="psf")
    lemma.add_argument("--seed", type=int, default=0)
    lemma.set_defaults(func=cmd_check_lemma)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

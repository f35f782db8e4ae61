"""``estimate``: run the Monte Carlo BP-vs-WLS convergence experiment."""

from __future__ import annotations

import argparse
import sys

from .experiment import DEFAULT_VARIANCES, THREADS_ENV, ExperimentConfig, run_experiment
from .gbp import DampingConfig, RunConfig
from .measurements import MeasurementError, PowerFlowError
from .network import CaseFormatError
from .wls import UnobservableError


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="estimate",
        description="Gaussian BP state estimation on the extended DC model: "
        "Monte Carlo convergence of BP towards the WLS estimate.",
        epilog=f"Set {THREADS_ENV} to override the number of worker threads.",
    )
    ap.add_argument("--case", required=True, help="case file (BUS/BRANCH format)")
    ap.add_argument("--plan", help="measurement plan file; default: built-in plan")
    ap.add_argument(
        "--variance",
        type=float,
        action="append",
        help="measurement variance, repeatable (default: 1e-4, 1e-6, 1e-8)",
    )
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--max-iter", type=int, default=2000)
    ap.add_argument("--tol", type=float, default=1e-12, help="stopping threshold on marginal-mean change")
    ap.add_argument("--p", type=float, default=0.5, help="damping Bernoulli probability")
    ap.add_argument("--alpha", type=float, default=0.5, help="damping weight")
    ap.add_argument("--seed", type=int, default=0, help="master seed")
    ap.add_argument("--out", default="results", help="output directory for CSV files")
    ap.add_argument("--no-damping", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        damping = None if args.no_damping else DampingConfig(p=args.p, alpha=args.alpha)
        cfg = ExperimentConfig(
            case_path=args.case,
            plan_path=args.plan,
            variance_set=tuple(args.variance) if args.variance else DEFAULT_VARIANCES,
            trials=args.trials,
            run=RunConfig(max_iterations=args.max_iter, tolerance=args.tol, damping=damping),
            output_dir=args.out,
            master_seed=args.seed,
        )
    except ValueError as exc:
        print(f"estimate: {exc}", file=sys.stderr)
        return 1

    try:
        curves = run_experiment(cfg)
    except UnobservableError as exc:
        print(f"estimate: {exc}", file=sys.stderr)
        return 2
    except (OSError, CaseFormatError, MeasurementError, PowerFlowError) as exc:
        print(f"estimate: {exc}", file=sys.stderr)
        return 1

    print(f"{'variance':>10} {'final RMSE':>12} {'converged':>10} {'all conv. at':>13} {'undetermined':>13}")
    for c in curves:
        print(
            f"{c.variance:>10.3g} {c.mean_rmse[-1]:>12.3e} {c.converged_fraction[-1]:>10.1%} "
            f"{c.iterations_to_tolerance:>13d} {c.undetermined_trials:>13d}"
        )
    print(f"results written to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

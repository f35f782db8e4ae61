"""Monte Carlo convergence experiments: BP trajectories against the WLS estimate."""

from __future__ import annotations

import csv
import dataclasses
import os
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .factor_graph import build_factor_graph
from .gbp import RunConfig, run
from .measurements import (
    PlanEntry,
    StateVector,
    default_plan,
    generate_measurements,
    load_plan,
    solve_extended_dc_power_flow,
)
from .network import Network, load_network
from .wls import UnobservableError, check_observability, solve_wls

THREADS_ENV = "GBPSE_THREADS"
DEFAULT_VARIANCES = (0.01**2, 0.001**2, 0.0001**2)


def rmse(bp: StateVector | np.ndarray, wls: StateVector | np.ndarray) -> float:
    """``||wls - bp||_2 / (2n)`` over the 2n state variables."""
    a = np.asarray(getattr(bp, "values", bp), dtype=float)
    b = np.asarray(getattr(wls, "values", wls), dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"state dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(b - a) / a.size)


@dataclass(frozen=True)
class ExperimentConfig:
    case_path: str | os.PathLike
    plan_path: str | os.PathLike | None = None
    variance_set: Sequence[float] = DEFAULT_VARIANCES
    trials: int = 1000
    run: RunConfig = field(default_factory=lambda: RunConfig(tolerance=1e-12))
    output_dir: str | os.PathLike | None = None
    master_seed: int = 0
    truth: StateVector | None = None
    noiseless: bool = False
    rmse_threshold: float = 1e-8
    threads: int | None = None

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.variance_set:
            raise ValueError("variance_set must not be empty")
        if any(not v > 0 for v in self.variance_set):
            raise ValueError("variances must be positive")
        if self.master_seed < 0:
            raise ValueError("master_seed must be non-negative")


@dataclass(frozen=True, eq=False)
class ConvergenceCurve:
    """Per-iteration mean RMSE over all trials for one measurement variance.

    ``converged_fraction[k]`` is the share of trials whose run had met its
    stopping rule by iteration ``k + 1``. Trials that stop early hold their
    final RMSE for the remaining iterations.
    """

    variance: float
    mean_rmse: np.ndarray
    converged_fraction: np.ndarray
    trial_final_rmse: np.ndarray
    trial_iterations: np.ndarray
    trial_first_below: np.ndarray
    undetermined_trials: int = 0

    @property
    def iterations_to_tolerance(self) -> int:
        """First iteration at which every trial had converged, or -1."""
        hit = np.flatnonzero(self.converged_fraction >= 1.0)
        return int(hit[0]) + 1 if hit.size else -1


@dataclass(frozen=True, eq=False)
class _Trial:
    rmse: np.ndarray
    converged: bool
    iterations: int
    undetermined: bool


def _zero_noise(seed: int, index: int, variance: float) -> float:
    return 0.0


def _trial_seeds(master_seed: int, var_index: int, trial: int) -> tuple[int, int]:
    noise_seed, damping_seed = np.random.SeedSequence([master_seed, var_index, trial]).generate_state(2)
    return int(noise_seed), int(damping_seed)


def _run_trial(net, truth, plan, variance, var_index, trial, cfg: ExperimentConfig) -> _Trial:
    noise_seed, damping_seed = _trial_seeds(cfg.master_seed, var_index, trial)
    kwargs = {"noise": _zero_noise} if cfg.noiseless else {}
    ms = generate_measurements(net, truth, plan, variance, noise_seed, **kwargs)
    x_wls = solve_wls(net, ms).state.values
    damping = cfg.run.damping
    if damping is not None:
        damping = dataclasses.replace(damping, seed=damping_seed)
    run_cfg = dataclasses.replace(cfg.run, damping=damping, record_trajectory=True)
    result = run(build_factor_graph(net, ms), run_cfg)
    errors = np.linalg.norm(result.trajectory - x_wls, axis=1) / x_wls.size
    return _Trial(errors, result.converged, result.iterations_used, bool(result.undetermined))


def _aggregate(variance: float, trials: list[_Trial], threshold: float) -> ConvergenceCurve:
    length = max(t.rmse.size for t in trials)
    total = np.zeros(length)
    done = np.zeros(length)
    for t in trials:
        padded = np.empty(length)
        padded[: t.rmse.size] = t.rmse
        padded[t.rmse.size :] = t.rmse[-1]
        total += padded
        if t.converged:
            done[t.iterations - 1 :] += 1
    first_below = []
    for t in trials:
        hit = np.flatnonzero(t.rmse < threshold)
        first_below.append(int(hit[0]) + 1 if hit.size else -1)
    return ConvergenceCurve(
        variance=variance,
        mean_rmse=total / len(trials),
        converged_fraction=done / len(trials),
        trial_final_rmse=np.array([t.rmse[-1] for t in trials]),
        trial_iterations=np.array([t.iterations for t in trials]),
        trial_first_below=np.array(first_below),
        undetermined_trials=sum(t.undetermined for t in trials),
    )


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, threads)


def prepare(cfg: ExperimentConfig) -> tuple[Network, StateVector, list[PlanEntry]]:
    """Load the case and plan and fix the truth state; fails if unobservable."""
    net = load_network(cfg.case_path)
    plan = load_plan(cfg.plan_path, net) if cfg.plan_path is not None else default_plan(net)
    truth = cfg.truth if cfg.truth is not None else solve_extended_dc_power_flow(net)
    probe = generate_measurements(net, truth, plan, 1.0, 0, noise=_zero_noise)
    report = check_observability(net, probe)
    if not report:
        raise UnobservableError(report)
    return net, truth, plan


def run_experiment(cfg: ExperimentConfig) -> list[ConvergenceCurve]:
    net, truth, plan = prepare(cfg)
    curves = []
    with ThreadPoolExecutor(max_workers=resolve_threads(cfg.threads)) as pool:
        for v_idx, variance in enumerate(cfg.variance_set):
            trials = list(
                pool.map(
                    lambda t: _run_trial(net, truth, plan, variance, v_idx, t, cfg),
                    range(cfg.trials),
                )
            )
            curves.append(_aggregate(variance, trials, cfg.rmse_threshold))
    if cfg.output_dir is not None:
        emit_csv(curves, cfg.output_dir)
    return curves


def _num(x: float) -> str:
    return format(float(x), ".17g")


def curve_filename(variance: float) -> str:
    return f"curve_sigma2_{variance:.6g}.csv"


def emit_csv(curves: Sequence[ConvergenceCurve], output_dir: str | os.PathLike) -> list[str]:
    """Write one curve file per variance plus ``summary.csv``; returns the paths."""
    os.makedirs(output_dir, exist_ok=True)
    paths = []
    for c in curves:
        path = os.path.join(output_dir, curve_filename(c.variance))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "mean_rmse", "converged_fraction"])
            for k, (r, f) in enumerate(zip(c.mean_rmse, c.converged_fraction), start=1):
                w.writerow([k, _num(r), _num(f)])
        paths.append(path)
    path = os.path.join(output_dir, "summary.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variance", "final_mean_rmse", "iterations_to_tolerance", "converged_fraction"])
        for c in curves:
            w.writerow([_num(c.variance), _num(c.mean_rmse[-1]), c.iterations_to_tolerance, _num(c.converged_fraction[-1])])
    paths.append(path)
    return paths


def read_curve_csv(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parse a curve file back into ``(iteration, mean_rmse, converged_fraction)``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["iteration", "mean_rmse", "converged_fraction"]:
        raise ValueError(f"{path}: unexpected header {rows[0]}")
    body = rows[1:]
    return (
        np.array([int(r[0]) for r in body], dtype=int),
        np.array([float(r[1]) for r in body]),
        np.array([float(r[2]) for r in body]),
    )


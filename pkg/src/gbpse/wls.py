"""Weighted least-squares reference estimator for the linear measurement model."""

from __future__ import annotations

import os
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .measurements import Measurement, StateVar, StateVector, linearize, state_variables
from .network import Network


class UnobservableError(ValueError):
    def __init__(self, report: ObservabilityReport):
        self.report = report
        names = ", ".join(str(v) for v in report.unobservable) or "none identified"
        super().__init__(
            f"measurement set is not observable: rank {report.rank} < {report.n_states}; "
            f"variables in the null space: {names}"
        )


@dataclass(frozen=True)
class ObservabilityReport:
    rank: int
    n_states: int
    unobservable: list[StateVar] = field(default_factory=list)

    @property
    def observable(self) -> bool:
        return self.rank == self.n_states

    def __bool__(self) -> bool:
        return self.observable


@dataclass(frozen=True, eq=False)
class WlsSolution:
    state: StateVector
    covariance_diagonal: np.ndarray
    residual_norm: float

    def variance(self, var: StateVar) -> float:
        return float(self.covariance_diagonal[var.index(self.state.n_bus)])


def measurement_matrix(net: Network, ms: Sequence[Measurement]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stacked coefficient rows ``H``, right-hand side ``z - K`` and variances."""
    n = net.n_bus
    H = np.zeros((len(ms), 2 * n))
    rhs = np.zeros(len(ms))
    variances = np.zeros(len(ms))
    for k, m in enumerate(ms):
        f = linearize(m, net)
        for var, c in f.coeffs.items():
            H[k, var.index(n)] = c
        rhs[k] = m.z - f.constant
        variances[k] = m.variance
    return H, rhs, variances


def _report(H: np.ndarray, n_bus: int) -> ObservabilityReport:
    n_states = 2 * n_bus
    if H.shape[0] == 0:
        return ObservabilityReport(0, n_states, state_variables(n_bus))
    _, s, vt = np.linalg.svd(H)
    tol = s.max() * max(H.shape) * np.finfo(float).eps if s.size else 0.0
    rank = int(np.sum(s > tol))
    null = vt[rank:]
    involved = []
    if null.size:
        weight = np.abs(null).max(axis=0)
        involved = [v for v, w in zip(state_variables(n_bus), weight) if w > 1e-8]
    return ObservabilityReport(rank, n_states, involved)


def check_observability(net: Network, ms: Sequence[Measurement]) -> ObservabilityReport:
    """Column-rank test of the stacked measurement matrix."""
    H, _, _ = measurement_matrix(net, ms)
    return _report(H, net.n_bus)


def solve_wls(net: Network, ms: Sequence[Measurement]) -> WlsSolution:
    H, rhs, variances = measurement_matrix(net, ms)
    report = _report(H, net.n_bus)
    if not report:
        raise UnobservableError(report)
    # QR of the whitened system avoids squaring the condition number
    s = 1.0 / np.sqrt(variances)
    q, r = np.linalg.qr(s[:, None] * H)
    x = scipy.linalg.solve_triangular(r, q.T @ (s * rhs))
    r_inv = scipy.linalg.solve_triangular(r, np.eye(r.shape[0]))
    cov_diag = np.sum(r_inv * r_inv, axis=1)
    res = s * (rhs - H @ x)
    return WlsSolution(StateVector(x), cov_diag, float(np.sqrt(np.sum(res * res))))


def write_solution_csv(sol: WlsSolution, path: str | os.PathLike) -> None:
    """Dump the estimate in the trajectory CSV layout, with iteration ``-1``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration,variable,mean,variance\n")
        for var, m, v in zip(state_variables(sol.state.n_bus), sol.state.values, sol.covariance_diagonal):
            fh.write(f"-1,{var},{m:.17g},{v:.17g}\n")

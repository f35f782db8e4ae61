"""Synchronous Gaussian belief propagation over a measurement factor graph.

Messages are carried as (mean, variance) pairs. A variance of ``inf`` is
the uninformative "flat" message; it is represented exactly and maps to
precision 0 on the variable side.

The scalar kernels (``msg_variable_to_factor``, ``msg_factor_to_variable``,
``damp``, ``marginal``) are the reference definitions. :class:`GaussianBP`
applies the same rules to every edge of a graph at once.
"""

from __future__ import annotations

import math
import os
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .factor_graph import FactorGraph
from .measurements import LinearFunction, StateVar, StateVector, VarKind

FLAT_MEAN = {VarKind.V: 1.0, VarKind.THETA: 0.0}


@dataclass(frozen=True)
class GaussianMessage:
    mean: float
    variance: float

    def __post_init__(self) -> None:
        if not self.variance > 0:
            raise ValueError(f"message variance must be positive, got {self.variance}")

    @property
    def precision(self) -> float:
        return 0.0 if math.isinf(self.variance) else 1.0 / self.variance

    @property
    def is_flat(self) -> bool:
        return math.isinf(self.variance)


@dataclass(frozen=True)
class DampingConfig:
    """Randomized damping of factor-to-variable messages.

    With probability ``p`` an update is replaced by
    ``alpha * (previous + fresh)``. ``mode="moment"`` combines mean and
    variance separately; ``mode="precision"`` combines precision and
    precision-weighted mean instead.
    """

    p: float = 0.5
    alpha: float = 0.5
    seed: int = 0
    mode: str = "moment"

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"damping p must be in [0, 1], got {self.p}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"damping alpha must be in (0, 1], got {self.alpha}")
        if self.mode not in ("moment", "precision"):
            raise ValueError(f"unknown damping mode {self.mode!r}")


@dataclass(frozen=True)
class RunConfig:
    max_iterations: int = 2000
    tolerance: float = 1e-9
    damping: DampingConfig | None = field(default_factory=DampingConfig)
    record_trajectory: bool = False

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class Marginal:
    var: StateVar | None
    mean: float
    variance: float

    @property
    def determined(self) -> bool:
        return math.isfinite(self.variance)


@dataclass(frozen=True, eq=False)
class RunResult:
    marginals: list[Marginal]
    iterations_used: int
    converged: bool
    trajectory: np.ndarray | None = None
    trajectory_variances: np.ndarray | None = None

    @property
    def means(self) -> np.ndarray:
        return np.array([m.mean for m in self.marginals])

    @property
    def variances(self) -> np.ndarray:
        return np.array([m.variance for m in self.marginals])

    @property
    def state(self) -> StateVector:
        return StateVector(self.means)

    @property
    def undetermined(self) -> list[StateVar]:
        return [m.var for m in self.marginals if not m.determined]


def _fuse(incoming: Sequence[GaussianMessage], flat_mean: float) -> tuple[float, float]:
    if not incoming:
        return flat_mean, math.inf
    w = sum(m.precision for m in incoming)
    if w == 0.0:
        return flat_mean, math.inf
    h = sum(m.precision * m.mean for m in incoming)
    return h / w, 1.0 / w


def msg_variable_to_factor(incoming: Sequence[GaussianMessage], flat_mean: float = 0.0) -> GaussianMessage:
    """Product of the factor messages arriving on all *other* edges.

    With no incoming messages, or only flat ones, the result is flat at
    ``flat_mean``.
    """
    return GaussianMessage(*_fuse(incoming, flat_mean))


def msg_factor_to_variable(
    f: LinearFunction,
    z: float,
    variance: float,
    dest: StateVar,
    incoming: Mapping[StateVar, GaussianMessage],
) -> GaussianMessage:
    """Marginalize a linear Gaussian factor onto ``dest``.

    ``incoming`` holds the variable-to-factor messages of every other
    argument of ``f``. An infinite incoming variance gives an infinite
    output variance; the mean is still formed from all incoming means.
    """
    c = f.coeffs[dest]
    others = [v for v in f.coeffs if v != dest]
    missing = [str(v) for v in others if v not in incoming]
    if missing:
        raise KeyError(f"missing incoming messages for {', '.join(missing)}")
    s_mean = sum(f.coeffs[v] * incoming[v].mean for v in others)
    s_var = sum(f.coeffs[v] ** 2 * incoming[v].variance for v in others)
    return GaussianMessage((z - s_mean - f.constant) / c, (variance + s_var) / (c * c))


def damp(previous: GaussianMessage, fresh: GaussianMessage, cfg: DampingConfig, draw: bool) -> GaussianMessage:
    if not draw:
        return fresh
    a = cfg.alpha
    if cfg.mode == "moment":
        return GaussianMessage(a * (previous.mean + fresh.mean), a * (previous.variance + fresh.variance))
    w = a * (previous.precision + fresh.precision)
    if w == 0.0:
        return GaussianMessage(a * (previous.mean + fresh.mean), math.inf)
    h = a * (previous.precision * previous.mean + fresh.precision * fresh.mean)
    return GaussianMessage(h / w, 1.0 / w)


def marginal(incoming: Sequence[GaussianMessage], var: StateVar | None = None) -> Marginal:
    """Belief of a variable from all its incoming factor messages."""
    flat_mean = FLAT_MEAN[var.kind] if var is not None else 0.0
    return Marginal(var, *_fuse(incoming, flat_mean))


def _padded_groups(keys: np.ndarray, n_groups: int) -> tuple[np.ndarray, np.ndarray]:
    """Lay edges out as a ``(n_groups, max_degree)`` table.

    Returns the edge index table (``-1`` where padded) and a boolean mask.
    Edges keep their relative order within a group.
    """
    order = np.argsort(keys, kind="stable")
    counts = np.bincount(keys, minlength=n_groups)
    width = int(counts.max()) if counts.size and keys.size else 0
    table = np.full((n_groups, max(width, 1)), -1, dtype=np.intp)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    slot = np.arange(keys.size) - np.repeat(starts, counts)
    table[keys[order], slot] = order
    return table, table >= 0


def _exclusive_sums(table_values: np.ndarray) -> np.ndarray:
    """Row-wise sum of every entry except the one in each slot.

    Built from prefix and suffix sums so no subtraction is involved.
    """
    prefix = np.cumsum(table_values, axis=1)
    suffix = np.cumsum(table_values[:, ::-1], axis=1)[:, ::-1]
    out = np.zeros_like(table_values)
    out[:, 1:] += prefix[:, :-1]
    out[:, :-1] += suffix[:, 1:]
    return out


class GaussianBP:
    """Edge-vectorized message state for one factor graph.

    ``f2v_*`` and ``v2f_*`` hold the factor-to-variable and
    variable-to-factor messages per edge; ``marg_*`` the current beliefs.
    """

    def __init__(self, fg: FactorGraph):
        self.fg = fg
        nv = len(fg.variables)
        nf = len(fg.factors)
        self._ftab, self._fmask = _padded_groups(fg.edge_factor, nf)
        self._vtab, self._vmask = _padded_groups(fg.edge_var, nv)
        self._fidx = np.where(self._fmask, self._ftab, 0)
        self._vidx = np.where(self._vmask, self._vtab, 0)

        coeff = fg.edge_coeff
        self._c = coeff
        self._c2 = coeff * coeff
        self._ctab = np.where(self._fmask, coeff[self._fidx], 0.0)
        self._c2tab = self._ctab * self._ctab
        z = np.array([f.measurement.z for f in fg.factors], dtype=float)
        k = np.array([f.fn.constant for f in fg.factors], dtype=float)
        s2 = np.array([f.measurement.variance for f in fg.factors], dtype=float)
        self._edge_rhs = (z - k)[fg.edge_factor]
        self._edge_var0 = s2[fg.edge_factor]
        direct = np.array([f.is_direct for f in fg.factors], dtype=bool)
        self._indirect_edge = ~direct[fg.edge_factor] if fg.n_edges else np.zeros(0, bool)

        self._flat = np.array([FLAT_MEAN[v.var.kind] for v in fg.variables])
        self.iteration = 0
        self.initialize()

    def initialize(self) -> None:
        """Direct factors send their readings; every other message starts flat."""
        self.v2f_mean = self._flat[self.fg.edge_var]
        self.v2f_var = np.full(self.fg.n_edges, np.inf)
        fresh_mean, fresh_var = self.factor_messages()
        direct = ~self._indirect_edge
        self.f2v_mean = np.where(direct, fresh_mean, self._flat[self.fg.edge_var])
        self.f2v_var = np.where(direct, fresh_var, np.inf)
        self.v2f_mean, self.v2f_var = self.variable_messages()
        self.marg_mean, self.marg_var = self.marginals()
        self.iteration = 0

    def factor_messages(self) -> tuple[np.ndarray, np.ndarray]:
        """Fresh factor-to-variable messages from the current v2f messages."""
        if self.fg.n_edges == 0:
            return np.zeros(0), np.zeros(0)
        m = np.where(self._fmask, self.v2f_mean[self._fidx], 0.0)
        v = np.where(self._fmask, self.v2f_var[self._fidx], 0.0)
        s_mean = _exclusive_sums(self._ctab * m)[self._fmask]
        s_var = _exclusive_sums(self._c2tab * v)[self._fmask]
        order = self._ftab[self._fmask]
        mean = np.empty(self.fg.n_edges)
        var = np.empty(self.fg.n_edges)
        mean[order] = (self._edge_rhs[order] - s_mean) / self._c[order]
        var[order] = (self._edge_var0[order] + s_var) / self._c2[order]
        return mean, var

    def _fuse_table(self, mean: np.ndarray, var: np.ndarray, exclusive: bool):
        flat = np.isinf(var)
        with np.errstate(divide="ignore"):
            w_e = np.where(flat, 0.0, 1.0 / var)
        h_e = np.where(flat, 0.0, w_e * mean)
        w = np.where(self._vmask, w_e[self._vidx], 0.0)
        h = np.where(self._vmask, h_e[self._vidx], 0.0)
        if exclusive:
            return _exclusive_sums(w), _exclusive_sums(h)
        return w.sum(axis=1), h.sum(axis=1)

    def variable_messages(self) -> tuple[np.ndarray, np.ndarray]:
        """Variable-to-factor messages from the current f2v messages."""
        if self.fg.n_edges == 0:
            return np.zeros(0), np.zeros(0)
        W, H = self._fuse_table(self.f2v_mean, self.f2v_var, exclusive=True)
        W, H = W[self._vmask], H[self._vmask]
        order = self._vtab[self._vmask]
        flat = self._flat[self.fg.edge_var[order]]
        informed = W > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            mean_w = H / W
            var_w = 1.0 / W
        mean = np.empty(self.fg.n_edges)
        var = np.empty(self.fg.n_edges)
        mean[order] = np.where(informed, mean_w, flat)
        var[order] = np.where(informed, var_w, np.inf)
        return mean, var

    def marginals(self) -> tuple[np.ndarray, np.ndarray]:
        return self._marginals_from(self.f2v_mean, self.f2v_var)

    def _marginals_from(self, f2v_mean: np.ndarray, f2v_var: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.fg.n_edges == 0:
            return self._flat.copy(), np.full(self._flat.size, np.inf)
        W, H = self._fuse_table(f2v_mean, f2v_var, exclusive=False)
        informed = W > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            mean = np.where(informed, H / W, self._flat)
            var = np.where(informed, 1.0 / W, np.inf)
        return mean, var

    def damping_draws(self, damping: DampingConfig, iteration: int) -> np.ndarray:
        """Bernoulli(p) draw per edge, keyed by ``(seed, iteration)`` and edge index."""
        u = np.random.default_rng([damping.seed, iteration]).random(self.fg.n_edges)
        return (u < damping.p) & self._indirect_edge

    def apply_damping(self, fresh_mean, fresh_var, draws, damping: DampingConfig):
        a = damping.alpha
        prev_mean, prev_var = self.f2v_mean, self.f2v_var
        if damping.mode == "moment":
            d_mean = a * (prev_mean + fresh_mean)
            d_var = a * (prev_var + fresh_var)
        else:
            with np.errstate(divide="ignore"):
                wp = np.where(np.isinf(prev_var), 0.0, 1.0 / prev_var)
                wf = np.where(np.isinf(fresh_var), 0.0, 1.0 / fresh_var)
            w = a * (wp + wf)
            h = a * (wp * prev_mean + wf * fresh_mean)
            with np.errstate(divide="ignore", invalid="ignore"):
                d_mean = np.where(w > 0, h / w, a * (prev_mean + fresh_mean))
                d_var = np.where(w > 0, 1.0 / w, np.inf)
        return np.where(draws, d_mean, fresh_mean), np.where(draws, d_var, fresh_var)

    def probe(self) -> tuple[np.ndarray, np.ndarray]:
        """Marginals after one undamped sweep, without changing the state."""
        return self._marginals_from(*self.factor_messages())

    def step(self, damping: DampingConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
        """One synchronous sweep; returns the new marginal means and variances."""
        self.iteration += 1
        mean, var = self.factor_messages()
        if damping is not None and self.iteration > 1:
            draws = self.damping_draws(damping, self.iteration)
            mean, var = self.apply_damping(mean, var, draws, damping)
        self.f2v_mean, self.f2v_var = mean, var
        self.v2f_mean, self.v2f_var = self.variable_messages()
        self.marg_mean, self.marg_var = self.marginals()
        return self.marg_mean, self.marg_var

    def result_marginals(self) -> list[Marginal]:
        return [
            Marginal(node.var, float(m), float(v))
            for node, m, v in zip(self.fg.variables, self.marg_mean, self.marg_var)
        ]


def _change(old_mean, old_var, new_mean, new_var) -> tuple[float, bool]:
    d_mean = float(np.max(np.abs(new_mean - old_mean))) if new_mean.size else 0.0
    same_support = np.array_equal(np.isinf(old_var), np.isinf(new_var))
    return d_mean, same_support


def _settled(engine: GaussianBP, cfg: RunConfig) -> bool:
    if cfg.damping is None or cfg.damping.p == 0.0:
        return True
    probe_mean, probe_var = engine.probe()
    d_mean, same_support = _change(engine.marg_mean, engine.marg_var, probe_mean, probe_var)
    return d_mean <= cfg.tolerance and same_support


def run(fg: FactorGraph, cfg: RunConfig = RunConfig()) -> RunResult:
    """Iterate sweeps until marginals settle or ``max_iterations`` is hit.

    Converged means: every marginal mean moved by at most ``tolerance``, and
    every finite marginal variance by at most ``tolerance`` relative to its
    value, in the last sweep. A damped sweep can move less than a plain one,
    so with damping the state must also pass the mean test for one undamped
    sweep before the run stops.
    """
    engine = GaussianBP(fg)
    means, variances = [], []
    converged = False
    for _ in range(cfg.max_iterations):
        old_mean, old_var = engine.marg_mean, engine.marg_var
        new_mean, new_var = engine.step(cfg.damping)
        if cfg.record_trajectory:
            means.append(new_mean)
            variances.append(new_var)
        d_mean, same_support = _change(old_mean, old_var, new_mean, new_var)
        if d_mean <= cfg.tolerance and same_support:
            fin = np.isfinite(new_var)
            d_var = np.abs(new_var[fin] - old_var[fin])
            if np.all(d_var <= cfg.tolerance * new_var[fin]) and _settled(engine, cfg):
                converged = True
                break
    return RunResult(
        marginals=engine.result_marginals(),
        iterations_used=engine.iteration,
        converged=converged,
        trajectory=np.array(means) if cfg.record_trajectory else None,
        trajectory_variances=np.array(variances) if cfg.record_trajectory else None,
    )


def write_trajectory_csv(result: RunResult, fg: FactorGraph, path: str | os.PathLike) -> None:
    """CSV rows ``iteration,variable,mean,variance`` for every recorded sweep."""
    if result.trajectory is None:
        raise ValueError("run was not recorded; set record_trajectory")
    names = [str(v.var) for v in fg.variables]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration,variable,mean,variance\n")
        for k, (row_m, row_v) in enumerate(zip(result.trajectory, result.trajectory_variances), start=1):
            for name, m, v in zip(names, row_m, row_v):
                fh.write(f"{k},{name},{m:.17g},{v:.17g}\n")

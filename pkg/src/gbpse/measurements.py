"""Extended-DC measurement functions, power-flow synthesis and noisy readings."""

from __future__ import annotations

import enum
import math
import os
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .network import Network, neighbors

PRUNE_TOL = 1e-15


class VarKind(enum.IntEnum):
    V = 0
    THETA = 1


class StateVar(NamedTuple):
    kind: VarKind
    bus: int

    def index(self, n_bus: int) -> int:
        """Position in the (all magnitudes, then all angles) state ordering."""
        return int(self.kind) * n_bus + self.bus

    def __str__(self) -> str:
        return f"{'V' if self.kind == VarKind.V else 'theta'}_{self.bus}"


def state_variables(n_bus: int) -> list[StateVar]:
    return [StateVar(kind, bus) for kind in VarKind for bus in range(n_bus)]


@dataclass(frozen=True)
class StateVector:
    """Voltage magnitudes (p.u.) followed by angles (rad) as one flat array."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size % 2:
            raise ValueError("state vector must be 1-D with an even number of entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def flat(cls, n_bus: int) -> StateVector:
        return cls(np.concatenate([np.ones(n_bus), np.zeros(n_bus)]))

    @classmethod
    def from_parts(cls, magnitudes: Sequence[float], angles: Sequence[float]) -> StateVector:
        if len(magnitudes) != len(angles):
            raise ValueError("magnitudes and angles differ in length")
        return cls(np.concatenate([np.asarray(magnitudes, float), np.asarray(angles, float)]))

    @property
    def n_bus(self) -> int:
        return self.values.size // 2

    @property
    def magnitudes(self) -> np.ndarray:
        return self.values[: self.n_bus]

    @property
    def angles(self) -> np.ndarray:
        return self.values[self.n_bus :]

    def __getitem__(self, var: StateVar) -> float:
        if not 0 <= var.bus < self.n_bus:
            raise KeyError(f"state has no variable {var}")
        return float(self.values[var.index(self.n_bus)])

    def __len__(self) -> int:
        return self.values.size


class MeasurementKind(enum.Enum):
    P_FLOW = "P_FLOW"
    Q_FLOW = "Q_FLOW"
    P_INJ = "P_INJ"
    Q_INJ = "Q_INJ"
    I_MAG = "I_MAG"
    V = "V"
    THETA = "THETA"

    @property
    def on_branch(self) -> bool:
        return self in _BRANCH_KINDS

    @property
    def is_direct(self) -> bool:
        return self in (MeasurementKind.V, MeasurementKind.THETA)


_BRANCH_KINDS = frozenset({MeasurementKind.P_FLOW, MeasurementKind.Q_FLOW, MeasurementKind.I_MAG})


class PlanEntry(NamedTuple):
    """A measurement location: a bus id, or a branch index plus orientation.

    ``reverse=True`` meters a branch at its ``to_bus`` end.
    """

    kind: MeasurementKind
    target: int
    reverse: bool = False


@dataclass(frozen=True)
class Measurement:
    kind: MeasurementKind
    target: int
    z: float
    variance: float
    reverse: bool = False

    def __post_init__(self) -> None:
        if not self.variance > 0:
            raise ValueError(f"measurement variance must be positive, got {self.variance}")
        if self.reverse and not self.kind.on_branch:
            raise ValueError(f"{self.kind.value} is a bus measurement and has no orientation")

    @property
    def location(self) -> PlanEntry:
        return PlanEntry(self.kind, self.target, self.reverse)


@dataclass(frozen=True)
class LinearFunction:
    """Affine map ``sum(coeffs[v] * x[v]) + constant`` over state variables."""

    coeffs: Mapping[StateVar, float]
    constant: float = 0.0

    def __post_init__(self) -> None:
        if not self.coeffs:
            raise ValueError("linear function has no non-zero coefficient")
        if any(abs(c) < PRUNE_TOL for c in self.coeffs.values()):
            raise ValueError("linear function stores a zero coefficient")

    @classmethod
    def from_terms(cls, terms: Iterable[tuple[StateVar, float]], constant: float = 0.0) -> LinearFunction:
        """Accumulate repeated variables and prune near-zero coefficients."""
        acc: dict[StateVar, float] = {}
        for var, c in terms:
            acc[var] = acc.get(var, 0.0) + c
        return cls({v: c for v, c in acc.items() if abs(c) >= PRUNE_TOL}, constant)


class MeasurementError(ValueError):
    pass


def _branch_ends(net: Network, target: int, reverse: bool):
    if not 0 <= target < len(net.branches):
        raise MeasurementError(f"branch {target} not in network")
    br = net.branches[target]
    i, j = (br.to_bus, br.from_bus) if reverse else (br.from_bus, br.to_bus)
    return br, i, j


def measurement_function(kind: MeasurementKind, target: int, net: Network, reverse: bool = False) -> LinearFunction:
    """Extended-DC measurement function for a location in ``net``."""
    V, T = VarKind.V, VarKind.THETA

    if kind.on_branch:
        br, i, j = _branch_ends(net, target, reverse)
        g, b, b_sh = br.g, br.b, br.b_sh
        if kind is MeasurementKind.P_FLOW:
            terms = [(StateVar(V, i), g), (StateVar(V, j), -g), (StateVar(T, i), -b), (StateVar(T, j), b)]
            return LinearFunction.from_terms(terms)
        if kind is MeasurementKind.Q_FLOW:
            terms = [
                (StateVar(V, i), -(b + 2 * b_sh)),
                (StateVar(V, j), b),
                (StateVar(T, i), -g),
                (StateVar(T, j), g),
            ]
            return LinearFunction.from_terms(terms, b_sh)
        if b_sh != 0:
            raise MeasurementError(f"current magnitude on branch {target} requires b_sh = 0, got {b_sh}")
        y = math.sqrt(g * g + b * b)
        return LinearFunction.from_terms([(StateVar(V, i), y), (StateVar(V, j), -y)])

    if not 0 <= target < net.n_bus:
        raise MeasurementError(f"bus {target} not in network")
    i = target
    if kind is MeasurementKind.V:
        return LinearFunction({StateVar(V, i): 1.0})
    if kind is MeasurementKind.THETA:
        return LinearFunction({StateVar(T, i): 1.0})

    adm = net.admittance
    G, B = adm.G, adm.B
    others = sorted(neighbors(net, i, include_self=False))
    if kind is MeasurementKind.P_INJ:
        terms = [(StateVar(V, i), G[i, i]), (StateVar(T, i), math.fsum(B[i, j] for j in others))]
        for j in others:
            terms += [(StateVar(V, j), G[i, j]), (StateVar(T, j), -B[i, j])]
        return LinearFunction.from_terms(terms)
    if kind is MeasurementKind.Q_INJ:
        b_sum = math.fsum(B[i, j] for j in others)
        terms = [(StateVar(V, i), -(2 * B[i, i] + b_sum)), (StateVar(T, i), math.fsum(G[i, j] for j in others))]
        for j in others:
            terms += [(StateVar(V, j), -B[i, j]), (StateVar(T, j), -G[i, j])]
        return LinearFunction.from_terms(terms, math.fsum(B[i, j] for j in sorted(neighbors(net, i))))
    raise MeasurementError(f"unsupported measurement kind {kind}")


def linearize(m: Measurement, net: Network) -> LinearFunction:
    return measurement_function(m.kind, m.target, net, m.reverse)


def evaluate(f: LinearFunction, x: StateVector) -> float:
    return math.fsum([c * x[var] for var, c in f.coeffs.items()] + [f.constant])


class PowerFlowError(RuntimeError):
    pass


def solve_extended_dc_power_flow(
    net: Network, injections: Mapping[int, tuple[float, float]] | None = None
) -> StateVector:
    """Solve the linear injection equations with the slack pinned at 1 p.u., 0 rad.

    ``injections`` maps bus id to ``(P, Q)``; by default the scheduled
    injections stored on the buses are used.
    """
    slack = net.slack
    if slack is None:
        raise PowerFlowError("power flow needs exactly one slack bus")
    n = net.n_bus
    if injections is None:
        injections = {bus.id: (bus.p_injection, bus.q_injection) for bus in net.buses}
    missing = [k for k in range(n) if k != slack and k not in injections]
    if missing:
        raise PowerFlowError(f"no injection given for buses {missing}")

    if net.branches:
        rows = [br.from_bus for br in net.branches]
        cols = [br.to_bus for br in net.branches]
        graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        _, labels = connected_components(graph, directed=False)
    else:
        labels = np.arange(n)
    island = [k for k in range(n) if labels[k] != labels[slack]]
    if island:
        raise PowerFlowError(f"singular system: buses {island} are not connected to the slack bus {slack}")

    # the slack magnitude and angle are known; their columns move to the right-hand side
    pinned = {StateVar(VarKind.V, slack).index(n): 1.0, StateVar(VarKind.THETA, slack).index(n): 0.0}
    free = [c for c in range(2 * n) if c not in pinned]
    col = {c: k for k, c in enumerate(free)}
    A = np.zeros((2 * n - 2, 2 * n - 2))
    rhs = np.zeros(2 * n - 2)
    row = 0
    for i in range(n):
        if i == slack:
            continue
        for kind, value in ((MeasurementKind.P_INJ, injections[i][0]), (MeasurementKind.Q_INJ, injections[i][1])):
            f = measurement_function(kind, i, net)
            rhs[row] = value - f.constant
            for var, c in f.coeffs.items():
                idx = var.index(n)
                if idx in pinned:
                    rhs[row] -= c * pinned[idx]
                else:
                    A[row, col[idx]] = c
            row += 1

    try:
        y = np.linalg.solve(A, rhs) if free else np.zeros(0)
    except np.linalg.LinAlgError as exc:
        raise PowerFlowError(f"singular power-flow system: {exc}") from None
    residual = np.max(np.abs(A @ y - rhs), initial=0.0)
    if not residual <= 1e-10:
        raise PowerFlowError(f"power-flow residual {residual:.3e} exceeds 1e-10")
    x = np.empty(2 * n)
    x[free] = y
    for idx, value in pinned.items():
        x[idx] = value
    return StateVector(x)


NoiseFn = Callable[[int, int, float], float]


def gaussian_noise(seed: int, index: int, variance: float) -> float:
    """Zero-mean normal draw with the given variance, keyed by ``(seed, index)``."""
    rng = np.random.default_rng([seed, index])
    return float(rng.normal(0.0, math.sqrt(variance)))


def generate_measurements(
    net: Network,
    truth: StateVector,
    plan: Sequence[PlanEntry],
    variance: float,
    seed: int,
    noise: NoiseFn = gaussian_noise,
) -> list[Measurement]:
    """Evaluate every planned measurement at ``truth`` and add noise.

    The noise for measurement ``k`` depends only on ``(seed, k)``.
    """
    if not variance > 0:
        raise ValueError(f"variance must be positive, got {variance}")
    if truth.n_bus != net.n_bus:
        raise ValueError(f"truth has {truth.n_bus} buses, network has {net.n_bus}")
    out = []
    for k, entry in enumerate(plan):
        f = measurement_function(entry.kind, entry.target, net, entry.reverse)
        z = evaluate(f, truth) + noise(seed, k, variance)
        out.append(Measurement(entry.kind, entry.target, z, variance, entry.reverse))
    return out


def default_plan(net: Network) -> list[PlanEntry]:
    """Metering used for the reference experiments.

    Active and reactive flow on every branch (from end), voltage magnitude
    and angle at every bus, and active/reactive injection at the slack bus
    and at every bus whose scheduled active injection is zero.
    """
    plan = []
    for k in range(len(net.branches)):
        plan.append(PlanEntry(MeasurementKind.P_FLOW, k))
        plan.append(PlanEntry(MeasurementKind.Q_FLOW, k))
    for bus in net.buses:
        if bus.is_slack or bus.p_injection == 0.0:
            plan.append(PlanEntry(MeasurementKind.P_INJ, bus.id))
            plan.append(PlanEntry(MeasurementKind.Q_INJ, bus.id))
    for i in range(net.n_bus):
        plan.append(PlanEntry(MeasurementKind.V, i))
    for i in range(net.n_bus):
        plan.append(PlanEntry(MeasurementKind.THETA, i))
    return plan


def parse_plan(text: str, net: Network, path: str | None = None) -> list[PlanEntry]:
    """Parse ``KIND target [from|to]`` lines.

    Bus targets use the case-file bus ids; branch targets are 0-based
    positions in the case file's BRANCH section.
    """
    where = f"{path}:" if path else ""
    plan = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split("#", 1)[0].split()
        if not tokens:
            continue
        try:
            kind = MeasurementKind(tokens[0].upper())
        except ValueError:
            raise MeasurementError(f"{where}{lineno}: unknown measurement kind {tokens[0]!r}") from None
        if len(tokens) not in (2, 3) or (len(tokens) == 3 and not kind.on_branch):
            raise MeasurementError(f"{where}{lineno}: expected 'KIND target [from|to]'")
        try:
            raw = int(tokens[1])
        except ValueError:
            raise MeasurementError(f"{where}{lineno}: target must be an integer, got {tokens[1]!r}") from None
        reverse = False
        if len(tokens) == 3:
            if tokens[2] not in ("from", "to"):
                raise MeasurementError(f"{where}{lineno}: orientation must be 'from' or 'to'")
            reverse = tokens[2] == "to"
        if kind.on_branch:
            if not 0 <= raw < len(net.branches):
                raise MeasurementError(f"{where}{lineno}: branch {raw} not in network")
            target = raw
        else:
            try:
                target = net.bus_index(raw)
            except KeyError:
                raise MeasurementError(f"{where}{lineno}: bus {raw} not in network") from None
        entry = PlanEntry(kind, target, reverse)
        if kind is MeasurementKind.I_MAG:
            measurement_function(kind, target, net, reverse)
        plan.append(entry)
    return plan


def load_plan(path: str | os.PathLike, net: Network) -> list[PlanEntry]:
    path = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        return parse_plan(fh.read(), net, path)


def format_plan(plan: Sequence[PlanEntry], net: Network) -> str:
    lines = []
    for e in plan:
        if e.kind.on_branch:
            br = net.branches[e.target]
            a, b = net.labels[br.from_bus], net.labels[br.to_bus]
            lines.append(f"{e.kind.value} {e.target} {'to' if e.reverse else 'from'}  # {a}-{b}")
        else:
            lines.append(f"{e.kind.value} {net.labels[e.target]}")
    return "\n".join(lines) + "\n"

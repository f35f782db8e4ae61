"""Bus/branch grid model, bus admittance assembly and case-file I/O.

Case files are line oriented::

    # comment
    BUS
    1 1          # id slack_flag [P Q]
    2 0 -0.217 -0.127
    BRANCH
    1 2 4.99913 -15.2631 0.0264    # from to g b b_sh

Bus ids in the file may be arbitrary integers; they are normalized to
0-based contiguous ids in ascending order and the original ids are kept
as ``labels``. The optional ``P Q`` columns on a bus line are the
scheduled net injections (p.u.) used for power-flow synthesis.
"""

from __future__ import annotations

import functools
import os
from dataclasses import dataclass, field

import numpy as np


class CaseFormatError(ValueError):
    """Raised when a case file cannot be parsed."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


@dataclass(frozen=True)
class Bus:
    id: int
    is_slack: bool = False
    p_injection: float = 0.0
    q_injection: float = 0.0


@dataclass(frozen=True)
class Branch:
    """Series element between two buses with a symmetric shunt susceptance.

    ``b_sh`` is added to the diagonal susceptance of *both* endpoints.
    """

    from_bus: int
    to_bus: int
    g: float
    b: float
    b_sh: float = 0.0

    def __post_init__(self) -> None:
        if self.from_bus == self.to_bus:
            raise ValueError(f"branch endpoints must differ, got {self.from_bus}")
        if self.g < 0:
            raise ValueError(f"branch conductance must be non-negative, got {self.g}")


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Sparse symmetric bus conductance/susceptance maps keyed by ``(i, j)``."""

    G: dict[tuple[int, int], float]
    B: dict[tuple[int, int], float]
    n_bus: int

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        G = np.zeros((self.n_bus, self.n_bus))
        B = np.zeros((self.n_bus, self.n_bus))
        for (i, j), v in self.G.items():
            G[i, j] = v
        for (i, j), v in self.B.items():
            B[i, j] = v
        return G, B


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    labels: tuple[int, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        ids = [bus.id for bus in self.buses]
        if ids != list(range(len(ids))):
            raise ValueError("bus ids must be 0..n-1 in order")
        for k, br in enumerate(self.branches):
            for end in (br.from_bus, br.to_bus):
                if not 0 <= end < len(ids):
                    raise ValueError(f"branch {k} references unknown bus {end}")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(ids))

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def slack(self) -> int | None:
        """Id of the slack bus, or None if there is none."""
        slacks = [bus.id for bus in self.buses if bus.is_slack]
        if len(slacks) > 1:
            raise ValueError(f"network has {len(slacks)} slack buses, expected one")
        return slacks[0] if slacks else None

    @functools.cached_property
    def admittance(self) -> AdmittanceMatrix:
        return build_admittance(self)

    @functools.cached_property
    def _adjacency(self) -> tuple[frozenset[int], ...]:
        adj: list[set[int]] = [set() for _ in self.buses]
        for br in self.branches:
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
        return tuple(frozenset(s) for s in adj)

    def bus_index(self, label: int) -> int:
        """Map an external (file) bus id to the normalized id."""
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown bus {label}") from None


def build_admittance(net: Network) -> AdmittanceMatrix:
    """Assemble the bus admittance entries from branch data.

    Off-diagonals are the negated sums of series admittances between the two
    buses. Diagonals are the negated row sums of the off-diagonals (so row
    consistency is exact in floating point) plus, for B, the branch shunts of
    every incident branch.
    """
    G: dict[tuple[int, int], float] = {}
    B: dict[tuple[int, int], float] = {}
    shunt = [0.0] * net.n_bus
    for br in net.branches:
        i, j = br.from_bus, br.to_bus
        for key in ((i, j), (j, i)):
            G[key] = G.get(key, 0.0) - br.g
            B[key] = B.get(key, 0.0) - br.b
        shunt[i] += br.b_sh
        shunt[j] += br.b_sh

    for i in range(net.n_bus):
        g_ii = 0.0
        b_ii = 0.0
        for j in sorted(net._adjacency[i]):
            g_ii -= G[i, j]
            b_ii -= B[i, j]
        G[i, i] = g_ii
        B[i, i] = b_ii + shunt[i]
    return AdmittanceMatrix(G=G, B=B, n_bus=net.n_bus)


def neighbors(net: Network, i: int, include_self: bool = True) -> frozenset[int]:
    """Buses incident to bus ``i``, optionally including ``i`` itself."""
    if not 0 <= i < net.n_bus:
        raise KeyError(f"unknown bus {i}")
    adj = net._adjacency[i]
    return adj | {i} if include_self else adj


def _parse_float(tok: str, lineno: int, path: str | None) -> float:
    try:
        return float(tok)
    except ValueError:
        raise CaseFormatError(f"expected a number, got {tok!r}", lineno, path) from None


def _parse_int(tok: str, lineno: int, path: str | None) -> int:
    try:
        return int(tok)
    except ValueError:
        raise CaseFormatError(f"expected an integer, got {tok!r}", lineno, path) from None


def parse_network(text: str, path: str | None = None) -> Network:
    section = None
    raw_buses: list[tuple[int, bool, float, float, int]] = []
    raw_branches: list[tuple[int, int, float, float, float, int]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split("#", 1)[0].split()
        if not tokens:
            continue
        head = tokens[0].upper()
        if head in ("BUS", "BRANCH") and len(tokens) == 1:
            section = head
            continue
        if section == "BUS":
            if len(tokens) not in (2, 4):
                raise CaseFormatError("bus line needs 'id slack_flag [P Q]'", lineno, path)
            bus_id = _parse_int(tokens[0], lineno, path)
            flag = _parse_int(tokens[1], lineno, path)
            if flag not in (0, 1):
                raise CaseFormatError(f"slack flag must be 0 or 1, got {flag}", lineno, path)
            p, q = (_parse_float(t, lineno, path) for t in tokens[2:]) if len(tokens) == 4 else (0.0, 0.0)
            raw_buses.append((bus_id, bool(flag), p, q, lineno))
        elif section == "BRANCH":
            if len(tokens) != 5:
                raise CaseFormatError("branch line needs 'from to g b b_sh'", lineno, path)
            f = _parse_int(tokens[0], lineno, path)
            t = _parse_int(tokens[1], lineno, path)
            g, b, b_sh = (_parse_float(tok, lineno, path) for tok in tokens[2:])
            raw_branches.append((f, t, g, b, b_sh, lineno))
        else:
            raise CaseFormatError(f"data outside of a BUS/BRANCH section: {line.strip()!r}", lineno, path)

    seen: dict[int, int] = {}
    for bus_id, _, _, _, lineno in raw_buses:
        if bus_id in seen:
            raise CaseFormatError(f"duplicate bus id {bus_id} (first on line {seen[bus_id]})", lineno, path)
        seen[bus_id] = lineno

    labels = sorted(seen)
    index = {label: k for k, label in enumerate(labels)}
    by_label = {r[0]: r for r in raw_buses}
    buses = tuple(
        Bus(id=index[label], is_slack=by_label[label][1], p_injection=by_label[label][2], q_injection=by_label[label][3])
        for label in labels
    )

    branches = []
    for f, t, g, b, b_sh, lineno in raw_branches:
        for end in (f, t):
            if end not in index:
                raise CaseFormatError(f"branch references unknown bus {end}", lineno, path)
        try:
            branches.append(Branch(index[f], index[t], g, b, b_sh))
        except ValueError as exc:
            raise CaseFormatError(str(exc), lineno, path) from None
    return Network(buses=buses, branches=tuple(branches), labels=tuple(labels))


def load_network(path: str | os.PathLike) -> Network:
    path = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        return parse_network(fh.read(), path=path)


def format_network(net: Network) -> str:
    """Serialize ``net`` to case-file text; numbers round-trip bit-exactly."""

    def num(x: float) -> str:
        return format(x, ".17g")

    lines = ["BUS"]
    for bus, label in zip(net.buses, net.labels):
        row = f"{label} {int(bus.is_slack)}"
        if bus.p_injection or bus.q_injection:
            row += f" {num(bus.p_injection)} {num(bus.q_injection)}"
        lines.append(row)
    lines.append("BRANCH")
    for br in net.branches:
        lines.append(
            f"{net.labels[br.from_bus]} {net.labels[br.to_bus]} {num(br.g)} {num(br.b)} {num(br.b_sh)}"
        )
    return "\n".join(lines) + "\n"


def save_network(net: Network, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_network(net))

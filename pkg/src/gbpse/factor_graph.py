"""Bipartite factor graph of state variables and measurement factors.

Edges are stored as flat arrays so the message-passing engine can work on
whole sweeps at once. Edge ``e`` joins factor ``edge_factor[e]`` to
variable ``edge_var[e]`` with coefficient ``edge_coeff[e]``; edges are
grouped by factor (factor input order, then variable index).
"""

from __future__ import annotations

import os
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .measurements import LinearFunction, Measurement, StateVar, linearize, state_variables
from .network import Network


@dataclass(frozen=True)
class VariableNode:
    id: int
    var: StateVar


@dataclass(frozen=True)
class FactorNode:
    id: int
    measurement: Measurement
    fn: LinearFunction
    is_direct: bool


@dataclass(frozen=True, eq=False)
class FactorGraph:
    n_bus: int
    variables: tuple[VariableNode, ...]
    factors: tuple[FactorNode, ...]
    edge_factor: np.ndarray
    edge_var: np.ndarray
    edge_coeff: np.ndarray

    @property
    def n_edges(self) -> int:
        return self.edge_factor.size

    def factor_degrees(self) -> np.ndarray:
        return np.bincount(self.edge_factor, minlength=len(self.factors))

    def variable_degrees(self) -> np.ndarray:
        return np.bincount(self.edge_var, minlength=len(self.variables))

    def factor_edges(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.edge_factor == f)

    def variable_edges(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.edge_var == v)


def build_factor_graph(net: Network, ms: Sequence[Measurement]) -> FactorGraph:
    n = net.n_bus
    variables = tuple(VariableNode(k, var) for k, var in enumerate(state_variables(n)))
    factors = []
    ef, ev, ec = [], [], []
    for fid, m in enumerate(ms):
        fn = linearize(m, net)
        is_direct = m.kind.is_direct
        factors.append(FactorNode(fid, m, fn, is_direct))
        for var, c in sorted(fn.coeffs.items(), key=lambda item: item[0].index(n)):
            ef.append(fid)
            ev.append(var.index(n))
            ec.append(c)
    return FactorGraph(
        n_bus=n,
        variables=variables,
        factors=tuple(factors),
        edge_factor=np.asarray(ef, dtype=np.intp),
        edge_var=np.asarray(ev, dtype=np.intp),
        edge_coeff=np.asarray(ec, dtype=float),
    )


def _adjacency(fg: FactorGraph):
    nv = len(fg.variables)
    size = nv + len(fg.factors)
    return coo_matrix((np.ones(fg.n_edges), (fg.edge_var, nv + fg.edge_factor)), shape=(size, size))


def is_tree(fg: FactorGraph) -> bool:
    """True iff the graph has no cycle (a forest counts)."""
    size = len(fg.variables) + len(fg.factors)
    n_components, _ = connected_components(_adjacency(fg), directed=False)
    return fg.n_edges == size - n_components


def write_edge_list(fg: FactorGraph, path: str | os.PathLike) -> None:
    """Dump ``factor_id variable_id coefficient`` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for f, v, c in zip(fg.edge_factor, fg.edge_var, fg.edge_coeff):
            fh.write(f"{f} {v} {c:.17g}\n")

"""Bipartite-graph encoding of an instance for the graph network.

Variables and constraints become the two node classes of one graph: node i
(i < n) is variable i, node n + j is constraint j.  The adjacency carries the
(row-normalized) constraint coefficients symmetrically plus a unit diagonal,
so one sparse multiply mixes every node with its neighbors and itself.

All per-node reductions (row norms, row-objective cosines) sum their terms in
ascending value order, making the encoding — not just the network on top of
it — bit-for-bit equivariant under relabeling of variables and constraints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .autodiff import sorted_sum
from .core import BINARY, CONTINUOUS, INTEGER, integrality_violation

FEATURE_SCHEMA_VERSION = "node-features-v1"
N_FEATURES = 12

# Fixed 12-slot node feature layout.  Variable node i / constraint node j:
#   0: c_i / ||c||          | 0
#   1: kind is continuous   | 0
#   2: kind is integer      | 0
#   3: kind is binary       | 0
#   4: lower bound finite   | row lower bound finite
#   5: lower bound value    | row lower bound / ||a_j|| (0 when infinite)
#   6: upper bound finite   | row upper bound finite
#   7: upper bound value    | row upper bound / ||a_j|| (0 when infinite)
#   8: LP solution value    | ||a_j|| (original row norm)
#   9: LP fractionality     | cos(a_j, c)
#  10: 1 (is variable)      | 0
#  11: 0                    | 1 (is constraint)
# Slots 8-9 on variable nodes are zero when no LP solution is attached.


@dataclass
class BipartiteGraph:
    """One MIP (or tree node) as a featured graph."""

    n_var: int
    n_cons: int
    features: np.ndarray          # (n_var + n_cons) x N_FEATURES
    adjacency: sp.csr_matrix      # symmetric, unit diagonal
    schema_version: str = FEATURE_SCHEMA_VERSION
    has_lp_features: bool = False

    @property
    def n_nodes(self):
        return self.n_var + self.n_cons


def _row_segments(A):
    """(values, column-index) segments of a CSR matrix, row by row."""
    A = A.tocsr()
    for i in range(A.shape[0]):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        yield A.data[lo:hi], A.indices[lo:hi]


def encode(instance, lp_solution=None):
    """Build the BipartiteGraph for an instance per the fixed feature schema.

    ``lp_solution`` is an optional variable vector (typically the node's LP
    relaxation optimum); without it the two LP slots stay zero and the graph
    is flagged ``has_lp_features=False``.
    """
    n, m = instance.n, instance.m
    A = instance.A.tocsr()
    if lp_solution is not None:
        lp_solution = np.asarray(lp_solution, dtype=float)
        if lp_solution.shape != (n,):
            raise ValueError(f"LP solution has shape {lp_solution.shape}, "
                             f"expected ({n},)")

    c_norm = np.sqrt(sorted_sum(instance.c * instance.c))
    row_norms = np.empty(m)
    row_cos = np.empty(m)
    for j, (vals, cols) in enumerate(_row_segments(A)):
        row_norms[j] = np.sqrt(sorted_sum(vals * vals))
        dot = sorted_sum(vals * instance.c[cols])
        denom = row_norms[j] * c_norm
        row_cos[j] = dot / denom if denom > 0 else 0.0
    scale = np.where(row_norms > 0, row_norms, 1.0)

    U = np.zeros((n + m, N_FEATURES))
    U[:n, 0] = instance.c / c_norm if c_norm > 0 else 0.0
    U[:n, 1] = instance.var_kinds == CONTINUOUS
    U[:n, 2] = instance.var_kinds == INTEGER
    U[:n, 3] = instance.var_kinds == BINARY
    U[:n, 4] = np.isfinite(instance.l)
    U[:n, 5] = np.where(np.isfinite(instance.l), instance.l, 0.0)
    U[:n, 6] = np.isfinite(instance.u)
    U[:n, 7] = np.where(np.isfinite(instance.u), instance.u, 0.0)
    if lp_solution is not None:
        U[:n, 8] = lp_solution
        U[:n, 9] = integrality_violation(lp_solution)
    U[:n, 10] = 1.0

    b_l = instance.b_l / scale
    b_u = instance.b_u / scale
    U[n:, 4] = np.isfinite(b_l)
    U[n:, 5] = np.where(np.isfinite(b_l), b_l, 0.0)
    U[n:, 6] = np.isfinite(b_u)
    U[n:, 7] = np.where(np.isfinite(b_u), b_u, 0.0)
    U[n:, 8] = row_norms
    U[n:, 9] = row_cos
    U[n:, 11] = 1.0

    coo = A.tocoo()
    normalized = coo.data / scale[coo.row]
    size = n + m
    rows = np.concatenate([coo.col, coo.row + n, np.arange(size)])
    cols = np.concatenate([coo.row + n, coo.col, np.arange(size)])
    data = np.concatenate([normalized, normalized, np.ones(size)])
    adjacency = sp.coo_matrix((data, (rows, cols)), shape=(size, size)).tocsr()

    return BipartiteGraph(n_var=n, n_cons=m, features=U, adjacency=adjacency,
                          has_lp_features=lp_solution is not None)


def permute_graph(graph, var_perm, cons_perm):
    """Relabel graph nodes: position k holds old variable/constraint perm[k]."""
    var_perm = np.asarray(var_perm, dtype=int)
    cons_perm = np.asarray(cons_perm, dtype=int)
    node_perm = np.concatenate([var_perm, graph.n_var + cons_perm])
    adj = graph.adjacency.tocsr()[node_perm][:, node_perm].tocsr()
    return BipartiteGraph(
        n_var=graph.n_var, n_cons=graph.n_cons,
        features=graph.features[node_perm].copy(), adjacency=adj,
        schema_version=graph.schema_version,
        has_lp_features=graph.has_lp_features)

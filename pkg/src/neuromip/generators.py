"""Synthetic instance families for training, evaluation, and tests.

Two homogeneous binary families with controllable size and seed: weighted set
cover (many fractional relaxation variables, branching matters) and
multi-dimensional knapsack.  Families are deterministic functions of their
parameters, so every consumer regenerates identical instances from a seed
list.  Also provides the small fixed calibration instance used by the
calibrated clock.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .core import BINARY, MipInstance


def set_cover_instance(n_items=15, n_sets=20, min_cover=2, max_cover=4,
                       seed=0, name=None):
    """Weighted set cover: min c @ x with every item covered at least once.

    Each item is covered by a random 2..max_cover subset of the sets, so the
    instance is always feasible (x = 1).  Costs are drawn uniformly away from
    zero to keep relaxations non-degenerate.
    """
    rng = np.random.default_rng(seed)
    rows = np.zeros((n_items, n_sets))
    for i in range(n_items):
        k = int(rng.integers(min_cover, max_cover + 1))
        cover = rng.choice(n_sets, size=min(k, n_sets), replace=False)
        rows[i, cover] = 1.0
    # every set should matter somewhere; add uncovered sets to random items
    unused = np.flatnonzero(rows.sum(axis=0) == 0)
    for j in unused:
        rows[rng.integers(n_items), j] = 1.0
    c = rng.uniform(0.5, 2.0, n_sets)
    return MipInstance(
        name=name or f"setcover-{n_items}x{n_sets}-s{seed}",
        c=c,
        A=sp.csr_matrix(rows),
        b_l=np.ones(n_items),
        b_u=np.full(n_items, np.inf),
        l=np.zeros(n_sets),
        u=np.ones(n_sets),
        var_kinds=np.array([BINARY] * n_sets, dtype="U16"),
    )


def knapsack_instance(n_vars=15, n_rows=3, seed=0, tightness=0.5, name=None):
    """Multi-dimensional knapsack: max value subject to weight budgets.

    Stored in minimization form (negated values).  Budgets are a fixed
    fraction of total weight per row, so relaxations are fractional and the
    all-zero point is always feasible.
    """
    rng = np.random.default_rng(seed)
    values = rng.uniform(1.0, 10.0, n_vars)
    weights = rng.uniform(1.0, 10.0, (n_rows, n_vars))
    budgets = tightness * weights.sum(axis=1)
    return MipInstance(
        name=name or f"knapsack-{n_vars}x{n_rows}-s{seed}",
        c=-values,
        A=sp.csr_matrix(weights),
        b_l=np.full(n_rows, -np.inf),
        b_u=budgets,
        l=np.zeros(n_vars),
        u=np.ones(n_vars),
        var_kinds=np.array([BINARY] * n_vars, dtype="U16"),
    )


FAMILIES = {
    "set_cover": set_cover_instance,
    "knapsack": knapsack_instance,
}


def generate_family(kind, count, seed=0, **params):
    """A deterministic list of instances: family ``kind`` with seeds seed..seed+count-1."""
    if kind not in FAMILIES:
        raise ValueError(f"unknown family {kind!r}; have {sorted(FAMILIES)}")
    make = FAMILIES[kind]
    return [make(seed=seed + i, **params) for i in range(count)]


def fractional_root_family(kind, count, seed=0, min_candidates=2, **params):
    """Like generate_family, but keep only instances whose root relaxation is
    fractional in at least ``min_candidates`` integer variables.

    Scans seeds deterministically until ``count`` qualifying instances are
    found, so branching studies are not diluted by instances solved at the
    root.
    """
    from .bnb import fractional_candidates
    from .lp import CONVERGED, solve_lp_exact

    make = FAMILIES[kind]
    out = []
    s = seed
    while len(out) < count:
        inst = make(seed=s, **params)
        s += 1
        sol = solve_lp_exact(inst)
        if sol.status != CONVERGED:
            continue
        if fractional_candidates(sol.x, inst).size >= min_candidates:
            out.append(inst)
        if s - seed > 100 * count:
            raise RuntimeError(
                f"could not find {count} fractional-root instances in "
                f"{s - seed} seeds")
    return out


def calibration_instance():
    """The fixed small reference instance the calibrated clock solves.

    A 20-variable two-row knapsack, hard enough that one solve takes a
    measurable slice of CPU yet finishes in milliseconds at desk scale.
    Deterministic: every process builds the identical instance.
    """
    return knapsack_instance(n_vars=20, n_rows=2, seed=993, tightness=0.5,
                             name="calibration-knapsack-20")

"""Branch and bound over LP relaxations, with pluggable branching policies.

The solver keeps an open-node heap ordered by dual bound (best-bound
selection, FIFO among ties), solves each popped node's relaxation with the
exact backend, prunes against the incumbent with a relative tolerance, and
records every primal or dual bound improvement in an event log of
(elapsed_seconds, primal, dual) rows.

Branching policies are objects with a ``select`` method; strings name the
built-ins.  Full strong branching scores every fractional candidate by
actually solving both child relaxations, either exactly or with the batched
splitting solver (all 2 * |candidates| child LPs as one batch sharing a single
factorization, warm-started from the node's LP solution).
"""

from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import (
    MipInstance,
    SubMipSpec,
    apply_submip,
    check_feasible,
    integrality_violation,
    objective_value,
)
from .lp import (
    CONVERGED,
    INFEASIBLE,
    UNBOUNDED,
    AdmmConfig,
    BoundOverride,
    LpProblem,
    admm_solve_batch,
    factorize,
    solve_lp_exact,
    warm_state_from_solution,
)

INTEGRALITY_TOL = 1e-6
PRUNE_TOL = 1e-9
FSB_EPSILON = 1e-4

STATUS_OPTIMAL = "optimal"
STATUS_GAP = "gap_reached"
STATUS_LIMIT = "limit"


@dataclass
class SolverLimits:
    max_time: float | None = None
    max_nodes: int | None = None
    target_gap: float | None = None


@dataclass
class Node:
    """An open subproblem: the variable box it restricts, and bookkeeping.

    ``dual_bound`` starts at the parent's relaxation value and is raised to
    the node's own after its LP is solved (never lowered: a child bound may
    dip below its parent's only by floating-point noise, and clamping keeps
    the global bound monotone).
    """

    lower: np.ndarray
    upper: np.ndarray
    dual_bound: float
    depth: int
    order: int
    branch_var: int | None = None
    branch_dir: str | None = None
    branch_frac: float | None = None
    parent_objective: float | None = None
    warm_x: np.ndarray | None = None
    warm_duals: np.ndarray | None = None


@dataclass
class SolveResult:
    status: str
    incumbent: np.ndarray | None
    primal_bound: float
    dual_bound: float
    node_count: int
    event_log: list
    elapsed_seconds: float
    gap: float


@dataclass
class BranchScores:
    """Strong-branching evaluation of a candidate set at one node."""

    candidates: np.ndarray
    up_objectives: np.ndarray
    down_objectives: np.ndarray
    up_deltas: np.ndarray
    down_deltas: np.ndarray
    scores: np.ndarray


def relative_gap(primal, dual, eps=1e-12):
    """Primal-dual gap in [0, 1]: |p - d| scaled by the larger magnitude.

    Infinite or sign-mismatched pairs count as gap 1; two zeros as gap 0.
    """
    if not (np.isfinite(primal) and np.isfinite(dual)):
        return 1.0
    if primal * dual < 0:
        return 1.0
    return abs(primal - dual) / max(abs(primal), abs(dual), eps)


def fractional_candidates(x, instance, tol=INTEGRALITY_TOL):
    """Integer variables whose relaxation value sits off the integer grid."""
    ints = instance.integer_indices
    if ints.size == 0:
        return np.empty(0, dtype=int)
    dist = integrality_violation(x[ints])
    return ints[dist > tol]


def node_instance(instance, lower, upper):
    """The node viewed as a MIP of its own: same data, restricted box."""
    out = instance.copy()
    out.l = np.asarray(lower, dtype=float).copy()
    out.u = np.asarray(upper, dtype=float).copy()
    return out


def branch(node, var, value, order_up, order_down):
    """Split a node on an integer variable at a fractional relaxation value.

    Returns (down, up) children: the down child caps var at floor(value), the
    up child raises its lower bound to ceil(value).  Children inherit the
    parent's dual bound and warm-start data.  A child whose box empties is
    returned as None (it is infeasible outright).
    """
    lo, hi = np.floor(value), np.ceil(value)
    down = up = None
    if lo >= node.lower[var]:
        dl, du = node.lower.copy(), node.upper.copy()
        du[var] = lo
        down = Node(dl, du, node.dual_bound, node.depth + 1, order_down,
                    branch_var=var, branch_dir="down",
                    branch_frac=value - lo, parent_objective=node.dual_bound,
                    warm_x=node.warm_x, warm_duals=node.warm_duals)
    if hi <= node.upper[var]:
        ul, uu = node.lower.copy(), node.upper.copy()
        ul[var] = hi
        up = Node(ul, uu, node.dual_bound, node.depth + 1, order_up,
                  branch_var=var, branch_dir="up",
                  branch_frac=hi - value, parent_objective=node.dual_bound,
                  warm_x=node.warm_x, warm_duals=node.warm_duals)
    return down, up


def fsb_scores(problem, x, objective, candidates, backend="exact",
               admm_config=None, epsilon=FSB_EPSILON, big_delta=None,
               row_duals=None):
    """Full strong branching: solve both child LPs of every candidate.

    ``problem`` carries the node's bounds; ``x`` and ``objective`` are its
    relaxation solution and value.  Each candidate i yields an up child
    (lower bound raised to ceil(x_i)) and a down child (upper bound cut to
    floor(x_i)).  Objective increases are clamped at zero; an infeasible child
    contributes ``big_delta`` (default max(1, |objective|) * 1e3).  The score
    is (up_delta + epsilon) * (down_delta + epsilon).

    With the ``admm`` backend all 2 * |candidates| children are solved as one
    batch sharing a single factorization, warm-started from (x, row_duals).
    """
    candidates = np.asarray(candidates, dtype=int)
    k = candidates.size
    if big_delta is None:
        big_delta = max(1.0, abs(objective)) * 1e3
    up_obj = np.full(k, np.nan)
    down_obj = np.full(k, np.nan)

    jobs = []  # (slot, kind, override or None-for-infeasible)
    for t, i in enumerate(candidates):
        hi = np.ceil(x[i])
        lo = np.floor(x[i])
        if hi <= problem.u[i]:
            jobs.append((t, "up", BoundOverride(int(i), float(hi), float(problem.u[i]))))
        else:
            up_obj[t] = np.inf
        if lo >= problem.l[i]:
            jobs.append((t, "down", BoundOverride(int(i), float(problem.l[i]), float(lo))))
        else:
            down_obj[t] = np.inf

    if backend == "exact":
        for t, kind, ov in jobs:
            sol = solve_lp_exact(problem.with_bounds(ov.index, ov.lb, ov.ub))
            if sol.status == INFEASIBLE:
                val = np.inf
            elif sol.status == UNBOUNDED:
                val = -np.inf
            elif sol.status == CONVERGED:
                val = sol.objective
            else:
                val = np.inf  # backend failure on a child counts as unusable
            (up_obj if kind == "up" else down_obj)[t] = val
    elif backend == "admm":
        config = admm_config or AdmmConfig()
        warm = warm_state_from_solution(problem, x, row_duals=row_duals,
                                        rho=config.rho)
        overrides = [ov for _, _, ov in jobs]
        sols = admm_solve_batch(problem, overrides, config, warm=warm)
        for (t, kind, _), sol in zip(jobs, sols):
            val = sol.objective if np.isfinite(sol.objective) else np.inf
            (up_obj if kind == "up" else down_obj)[t] = val
    else:
        raise ValueError(f"unknown strong-branching backend {backend!r}")

    def deltas(objs):
        d = np.empty(k)
        for t in range(k):
            if np.isinf(objs[t]):
                d[t] = big_delta
            else:
                d[t] = max(objs[t] - objective, 0.0)
        return d

    up_d, down_d = deltas(up_obj), deltas(down_obj)
    scores = (up_d + epsilon) * (down_d + epsilon)
    return BranchScores(candidates=candidates, up_objectives=up_obj,
                        down_objectives=down_obj, up_deltas=up_d,
                        down_deltas=down_d, scores=scores)


def expert_distribution(scores):
    """Normalize strong-branching scores into a probability distribution.

    An all-zero score vector (possible only with epsilon 0) falls back to
    uniform.
    """
    s = np.asarray(scores, dtype=float)
    total = s.sum()
    if total <= 0 or not np.isfinite(total):
        return np.full(s.size, 1.0 / s.size)
    return s / total


@dataclass
class BranchContext:
    """Everything a branching policy may look at when choosing a variable."""

    instance: MipInstance
    problem: LpProblem          # node-bounded relaxation
    node: Node
    x: np.ndarray               # node relaxation solution
    objective: float            # pure LP objective (no instance constant)
    candidates: np.ndarray
    row_duals: np.ndarray | None
    rng: np.random.Generator
    depth: int


class MostFractionalPolicy:
    """Pick the candidate farthest from the integer grid; ties to lowest index."""

    def reset(self, instance, rng):
        pass

    def select(self, ctx):
        dist = integrality_violation(ctx.x[ctx.candidates])
        return int(ctx.candidates[int(np.argmax(dist))])


class RandomPolicy:
    """Uniform choice among candidates, driven by the solver's seeded rng."""

    def reset(self, instance, rng):
        pass

    def select(self, ctx):
        return int(ctx.candidates[int(ctx.rng.integers(ctx.candidates.size))])


class FsbPolicy:
    """Full strong branching; argmax of the product score, ties to lowest index."""

    def __init__(self, backend="exact", admm_config=None, epsilon=FSB_EPSILON):
        self.backend = backend
        self.admm_config = admm_config
        self.epsilon = epsilon
        self.last_scores = None

    def reset(self, instance, rng):
        self.last_scores = None

    def select(self, ctx):
        scores = fsb_scores(ctx.problem, ctx.x, ctx.objective, ctx.candidates,
                            backend=self.backend, admm_config=self.admm_config,
                            epsilon=self.epsilon, row_duals=ctx.row_duals)
        self.last_scores = scores
        return int(scores.candidates[int(np.argmax(scores.scores))])


class PseudocostPolicy:
    """Score candidates from historical per-unit dual-bound gains.

    Each branching that later evaluates a child LP contributes the observed
    per-unit gain (bound increase divided by the distance the variable was
    pushed).  A candidate with history on both sides scores by the product
    rule over its average gains scaled by the current fractional distances; a
    candidate without history falls back to its fractionality, so the first
    branching ever coincides with the most-fractional choice.
    """

    def __init__(self, epsilon=FSB_EPSILON):
        self.epsilon = epsilon
        self.history = {}

    def reset(self, instance, rng):
        self.history = {}

    def observe_child(self, var, direction, gain, distance):
        if distance <= INTEGRALITY_TOL:
            return
        sums = self.history.setdefault(var, [0.0, 0, 0.0, 0])
        unit = max(gain, 0.0) / distance
        if direction == "up":
            sums[0] += unit
            sums[1] += 1
        else:
            sums[2] += unit
            sums[3] += 1

    def select(self, ctx):
        best_idx, best_score = 0, -np.inf
        for t, i in enumerate(ctx.candidates):
            xi = ctx.x[i]
            f_down = xi - np.floor(xi)
            f_up = np.ceil(xi) - xi
            hist = self.history.get(int(i))
            if hist and hist[1] > 0 and hist[3] > 0:
                up_est = (hist[0] / hist[1]) * f_up
                down_est = (hist[2] / hist[3]) * f_down
                score = (up_est + self.epsilon) * (down_est + self.epsilon)
            else:
                score = min(f_down, f_up)
            if score > best_score:
                best_idx, best_score = t, score
        return int(ctx.candidates[best_idx])


_POLICIES = {
    "most_fractional": MostFractionalPolicy,
    "random": RandomPolicy,
    "fsb": FsbPolicy,
    "pseudocost": PseudocostPolicy,
}


def make_policy(policy):
    """Resolve a policy argument: an object with select(), or a builtin name.

    ``fsb`` takes an optional backend suffix: ``fsb:admm`` scores with the
    batched splitting solver, plain ``fsb`` (or ``fsb:exact``) with the exact
    backend.
    """
    if policy is None:
        return MostFractionalPolicy()
    if hasattr(policy, "select"):
        return policy
    name = str(policy)
    if name.startswith("fsb"):
        _, sep, backend = name.partition(":")
        if not sep:  # accept the dash spelling used on command lines
            _, _, backend = name.partition("-")
        return FsbPolicy(backend=backend or "exact")
    if name in _POLICIES:
        return _POLICIES[name]()
    raise ValueError(f"unknown branching policy {policy!r}")


def solve(instance, policy=None, limits=None, seed=0, clock=None,
          on_incumbent=None, node_callback=None):
    """Branch and bound to optimality, a gap target, or a resource limit.

    Returns a SolveResult whose event log holds one (elapsed, primal, dual)
    row per bound improvement; the dual column is non-decreasing and the
    primal column non-increasing.  An infeasible root relaxation proves the
    instance infeasible: status ``optimal`` with no incumbent and +inf primal
    bound.  ``clock`` may replace the wall clock (any zero-argument callable
    returning seconds); ``on_incumbent`` fires on every strict improvement
    with (x, objective, elapsed).
    """
    limits = limits or SolverLimits()
    policy = make_policy(policy)
    rng = np.random.default_rng(seed)
    policy.reset(instance, rng)
    clock = clock or time.monotonic
    start = clock()
    elapsed = lambda: clock() - start

    const = instance.objective_constant
    base = LpProblem.from_instance(instance)
    ints = instance.integer_indices

    counter = itertools.count()
    root = Node(lower=instance.l.copy(), upper=instance.u.copy(),
                dual_bound=-np.inf, depth=0, order=next(counter))
    heap = [(root.dual_bound, root.order, root)]
    incumbent = None
    primal = np.inf
    global_dual = -np.inf
    event_log = []
    node_count = 0
    status = STATUS_OPTIMAL

    def log_event():
        event_log.append((elapsed(), primal, global_dual))

    def prune_tol():
        return PRUNE_TOL * max(1.0, abs(primal)) if np.isfinite(primal) else 0.0

    def open_minimum():
        return heap[0][0] if heap else np.inf

    def gap_met():
        return (limits.target_gap is not None and incumbent is not None
                and relative_gap(primal, global_dual) <= limits.target_gap)

    while heap:
        if limits.max_time is not None and elapsed() >= limits.max_time:
            status = STATUS_LIMIT
            break
        if limits.max_nodes is not None and node_count >= limits.max_nodes:
            status = STATUS_LIMIT
            break
        if gap_met():
            status = STATUS_GAP
            break

        _, _, node = heapq.heappop(heap)
        if np.isfinite(primal) and node.dual_bound >= primal - prune_tol():
            # best-bound order: every remaining node is at least as high
            heap.clear()
            break

        prob = LpProblem(c=base.c, A=base.A, b_l=base.b_l, b_u=base.b_u,
                         l=node.lower, u=node.upper)
        sol = solve_lp_exact(prob)
        node_count += 1

        if sol.status == INFEASIBLE:
            if node.branch_var is None:
                # infeasible root: instance proven infeasible
                global_dual = np.inf
                log_event()
                break
            continue
        if sol.status == UNBOUNDED:
            raise ValueError(
                "relaxation is unbounded; the instance has no finite optimum")
        if sol.status != CONVERGED:
            raise RuntimeError(f"node relaxation failed with status {sol.status!r}")

        node_obj = sol.objective + const
        node.dual_bound = max(node_obj, node.dual_bound)

        # pseudocost feedback: this node is an evaluated child of its branching
        if node.branch_var is not None and hasattr(policy, "observe_child") \
                and node.parent_objective is not None \
                and np.isfinite(node.parent_objective):
            policy.observe_child(node.branch_var, node.branch_dir,
                                 node.dual_bound - node.parent_objective,
                                 node.branch_frac)

        new_dual = min(node.dual_bound, open_minimum())
        if new_dual > global_dual:
            global_dual = min(new_dual, primal) if np.isfinite(primal) else new_dual
            log_event()

        if np.isfinite(primal) and node.dual_bound >= primal - prune_tol():
            continue

        candidates = fractional_candidates(sol.x, instance)
        if candidates.size == 0:
            x_cand = sol.x.copy()
            if ints.size:
                x_cand[ints] = np.round(x_cand[ints])
                x_cand = np.clip(x_cand, node.lower, node.upper)
            report = check_feasible(instance, x_cand)
            if report.ok:
                obj = objective_value(instance, x_cand)
                if obj < primal - 1e-12:
                    incumbent = x_cand
                    primal = obj
                    log_event()
                    if on_incumbent is not None:
                        on_incumbent(x_cand.copy(), obj, elapsed())
            continue

        ctx = BranchContext(instance=instance, problem=prob, node=node,
                            x=sol.x, objective=sol.objective,
                            candidates=candidates, row_duals=sol.row_duals,
                            rng=rng, depth=node.depth)
        if node_callback is not None:
            node_callback(ctx)
        var = int(policy.select(ctx))
        if var not in set(int(i) for i in candidates):
            raise ValueError(f"policy chose {var}, not a fractional candidate")

        node.warm_x = sol.x
        node.warm_duals = sol.row_duals
        down, up = branch(node, var, float(sol.x[var]),
                          order_up=next(counter), order_down=next(counter))
        for child in (down, up):
            if child is None:
                continue
            if np.isfinite(primal) and child.dual_bound >= primal - prune_tol():
                continue
            heapq.heappush(heap, (child.dual_bound, child.order, child))

    if status == STATUS_OPTIMAL and incumbent is not None:
        # exhausted tree: the incumbent is proven optimal
        if global_dual < primal:
            global_dual = primal
            log_event()
    if status == STATUS_OPTIMAL and incumbent is None:
        global_dual = np.inf

    if status != STATUS_OPTIMAL and heap:
        # the open-set minimum at stop time is a valid (and tighter) dual bound
        cand = open_minimum()
        if np.isfinite(primal):
            cand = min(cand, primal)
        if np.isfinite(cand) and cand > global_dual:
            global_dual = cand
            log_event()

    return SolveResult(
        status=status,
        incumbent=incumbent,
        primal_bound=primal,
        dual_bound=global_dual,
        node_count=node_count,
        event_log=event_log,
        elapsed_seconds=elapsed(),
        gap=relative_gap(primal, global_dual),
    )


@dataclass
class CutSelection:
    selected: list
    bound: float
    result: SolveResult


def select_cuts_expert(instance, cut_pool, k, big_m=1e6, policy=None,
                       limits=None, seed=0):
    """Choose the k-subset of cuts maximizing the LP dual bound, by MIP.

    ``instance`` must be in one-sided row form (every b_l infinite), so the
    relaxation reads A x <= b; ``cut_pool`` is (A_hat, b_hat) with rows
    A_hat x <= b_hat.  The selection MIP maximizes the dual objective
    b @ y + b_hat @ gamma over dual-feasible (y, gamma) <= 0, where each
    cut's multiplier is released only if its binary selector is on
    (gamma >= -big_m * z) and exactly k selectors are on.  Solved with this
    package's own branch and bound; returns the chosen indices and the
    certified bound.  The base relaxation must be feasible and bounded for
    the dual objective to be bounded.
    """
    if np.any(np.isfinite(instance.b_l)):
        raise ValueError("cut selection expects one-sided rows (A x <= b form)")
    A_hat, b_hat = cut_pool
    A_hat = sp.csr_matrix(A_hat, dtype=float)
    b_hat = np.asarray(b_hat, dtype=float)
    m_hat = A_hat.shape[0]
    if not 0 <= k <= m_hat:
        raise ValueError(f"k = {k} outside the pool size {m_hat}")
    if A_hat.shape[1] != instance.n:
        raise ValueError("cut pool has wrong variable count")

    m = instance.m
    A = instance.A.tocsr()
    b = instance.b_u

    # columns: y (m) | gamma (m_hat) | z (m_hat)
    eq_block = sp.hstack([A.T, A_hat.T, sp.csr_matrix((instance.n, m_hat))])
    act_block = sp.hstack([sp.csr_matrix((m_hat, m)), sp.eye(m_hat),
                           big_m * sp.eye(m_hat)])
    card_block = sp.hstack([sp.csr_matrix((1, m + m_hat)),
                            sp.csr_matrix(np.ones((1, m_hat)))])
    M = sp.vstack([eq_block, act_block, card_block]).tocsr()

    b_l = np.concatenate([instance.c, np.zeros(m_hat), [float(k)]])
    b_u = np.concatenate([instance.c, np.full(m_hat, np.inf), [float(k)]])
    c_sel = np.concatenate([-b, -b_hat, np.zeros(m_hat)])
    lower = np.concatenate([np.full(m, -np.inf), np.full(m_hat, -big_m),
                            np.zeros(m_hat)])
    upper = np.concatenate([np.zeros(m), np.zeros(m_hat), np.ones(m_hat)])
    kinds = np.array(["continuous"] * (m + m_hat) + ["binary"] * m_hat,
                     dtype="U16")

    selection_mip = MipInstance(
        name=f"{instance.name}-cut-selection-k{k}",
        c=c_sel, A=M, b_l=b_l, b_u=b_u, l=lower, u=upper, var_kinds=kinds)

    result = solve(selection_mip, policy=policy or "most_fractional",
                   limits=limits, seed=seed)
    if result.incumbent is None:
        raise RuntimeError(
            f"cut-selection MIP ended {result.status} with no incumbent")
    z = result.incumbent[m + m_hat:]
    selected = [int(i) for i in np.flatnonzero(z > 0.5)]
    return CutSelection(selected=selected, bound=-result.primal_bound,
                        result=result)


def lp_bound_with_cuts(instance, cut_pool, selected):
    """Exact LP value of the relaxation plus the chosen cut rows (for checks)."""
    A_hat, b_hat = cut_pool
    A_hat = sp.csr_matrix(A_hat, dtype=float)
    b_hat = np.asarray(b_hat, dtype=float)
    rows = list(selected)
    if rows:
        A = sp.vstack([instance.A, A_hat[rows]]).tocsr()
        b_u = np.concatenate([instance.b_u, b_hat[rows]])
        b_l = np.concatenate([instance.b_l, np.full(len(rows), -np.inf)])
    else:
        A, b_u, b_l = instance.A, instance.b_u, instance.b_l
    prob = LpProblem(c=instance.c, A=A, b_l=b_l, b_u=b_u,
                     l=instance.l, u=instance.u)
    sol = solve_lp_exact(prob)
    if sol.status != CONVERGED:
        raise RuntimeError(f"cut-augmented relaxation ended {sol.status}")
    return sol.objective

"""Linear-programming backends: a splitting solver built for massive batching,
plus an exact reference solver.

The iterative solver handles the canonical box/row form

    minimize    c @ x
    subject to  b_l <= A @ x <= b_u,   l <= x <= u

by splitting into an equality-coupled pair (x, y) with A @ x = y and a boxed
pair (x~, y~), coupled by the consensus constraint (x, y) = (x~, y~).  Each
iteration solves one linear system with the fixed coefficient matrix

    [[I, A.T],
     [A, -I ]]

which is factorized once and reused across all iterations — and, in batch
mode, across every bound variant simultaneously via matrix right-hand sides.
Batched results are bit-for-bit identical to solving each variant alone in
direct mode: every per-column operation is elementwise, and the sparse-LU
multi-column solve processes columns independently.

The exact solver wraps scipy's simplex-grade backend and is the reference the
iterative solver is tested against; it also serves as the default relaxation
backend for small instances elsewhere in the package.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linprog

from .core import MipInstance

CONVERGED = "converged"
MAX_ITERS = "max_iters"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
UNKNOWN = "unknown"


class CgConvergenceError(RuntimeError):
    """The conjugate-gradient inner solve failed to reach its tolerance."""


@dataclass
class LpProblem:
    """A pure LP in two-sided row form (integrality already dropped)."""

    c: np.ndarray
    A: sp.csr_matrix
    b_l: np.ndarray
    b_u: np.ndarray
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.A = sp.csr_matrix(self.A, dtype=float)
        self.b_l = np.asarray(self.b_l, dtype=float)
        self.b_u = np.asarray(self.b_u, dtype=float)
        self.l = np.asarray(self.l, dtype=float)
        self.u = np.asarray(self.u, dtype=float)

    @property
    def n(self):
        return self.c.shape[0]

    @property
    def m(self):
        return self.A.shape[0]

    @classmethod
    def from_instance(cls, instance):
        return cls(c=instance.c.copy(), A=instance.A.copy(),
                   b_l=instance.b_l.copy(), b_u=instance.b_u.copy(),
                   l=instance.l.copy(), u=instance.u.copy())

    def with_bounds(self, index, lb, ub):
        """Copy with one variable's bounds replaced."""
        l, u = self.l.copy(), self.u.copy()
        l[index], u[index] = lb, ub
        return replace(self, l=l, u=u)


@dataclass
class BoundOverride:
    """One batch variant: variable ``index`` gets bounds [lb, ub]."""

    index: int
    lb: float
    ub: float


@dataclass
class AdmmConfig:
    rho: float = 1.0
    max_iters: int = 100
    eps_primal: float = 1e-4
    eps_dual: float = 1e-4
    mode: str = "direct"  # direct | indirect_cg
    cg_tol: float = 1e-10
    cg_max_iters: int = 1000


@dataclass
class AdmmState:
    """Full splitting state; columns may be vectors (single) or matrices (batch)."""

    x: np.ndarray
    y: np.ndarray
    x_tilde: np.ndarray
    y_tilde: np.ndarray
    lam_x: np.ndarray
    lam_y: np.ndarray

    def copy(self):
        return AdmmState(self.x.copy(), self.y.copy(), self.x_tilde.copy(),
                         self.y_tilde.copy(), self.lam_x.copy(), self.lam_y.copy())

    def column(self, k):
        return AdmmState(self.x[:, k].copy(), self.y[:, k].copy(),
                         self.x_tilde[:, k].copy(), self.y_tilde[:, k].copy(),
                         self.lam_x[:, k].copy(), self.lam_y[:, k].copy())


@dataclass
class LpSolution:
    """Result of an LP solve.

    ``x`` is always bound-feasible (the iterative solver reports the projected
    iterate); ``objective`` is the plain c @ x with no instance constant.
    ``row_duals``, when present, are row multipliers mu in the stationarity
    convention c + A.T mu + eta = 0 (eta the bound multipliers).
    """

    x: np.ndarray
    objective: float
    status: str
    iterations: int = 0
    primal_residual: float = 0.0
    dual_residual: float = 0.0
    state: AdmmState | None = None
    row_duals: np.ndarray | None = None


@dataclass
class KktFactor:
    """A reusable solve handle for the fixed saddle-point matrix.

    ``solve`` accepts a vector of length n + m or a matrix with that many rows
    and returns the same shape.  In direct mode the handle owns a sparse LU
    factorization computed once; in indirect mode each call runs conjugate
    gradients on the reduced system (I + A.T A) p = s + A.T t per column.
    """

    n: int
    m: int
    mode: str
    _solve: object
    factor_seconds: float = 0.0

    def solve(self, rhs):
        return self._solve(np.asarray(rhs, dtype=float))


def factorize(problem, config=None):
    """Build the KKT solve handle for [[I, A.T], [A, -I]].

    The matrix does not depend on the penalty parameter, so one handle serves
    any rho and every bound variant of the same constraint matrix.
    """
    config = config or AdmmConfig()
    n, m = problem.n, problem.m
    t0 = time.perf_counter()

    if config.mode == "direct":
        if m == 0:
            solve = lambda rhs: rhs.copy()
        else:
            K = sp.bmat(
                [[sp.eye(n, format="csc"), problem.A.T],
                 [problem.A, -sp.eye(m, format="csc")]],
                format="csc",
            )
            lu = spla.splu(K)
            solve = lu.solve
    elif config.mode == "indirect_cg":
        A = problem.A.tocsr()
        reduced = spla.LinearOperator(
            (n, n), matvec=lambda v: v + A.T @ (A @ v), dtype=float)

        def solve(rhs):
            rhs = np.atleast_1d(rhs)
            single = rhs.ndim == 1
            cols = rhs[:, None] if single else rhs
            out = np.empty_like(cols)
            for k in range(cols.shape[1]):
                s, t = cols[:n, k], cols[n:, k]
                p = _run_cg(reduced, s + A.T @ t, config)
                out[:n, k] = p
                out[n:, k] = A @ p - t
            return out[:, 0] if single else out
    else:
        raise ValueError(f"unknown KKT mode {config.mode!r}")

    return KktFactor(n=n, m=m, mode=config.mode, _solve=solve,
                     factor_seconds=time.perf_counter() - t0)


def _run_cg(operator, b, config):
    try:
        p, info = spla.cg(operator, b, rtol=config.cg_tol, atol=0.0,
                          maxiter=config.cg_max_iters)
    except TypeError:  # older scipy spells the relative tolerance "tol"
        p, info = spla.cg(operator, b, tol=config.cg_tol, atol=0.0,
                          maxiter=config.cg_max_iters)
    if info != 0:
        raise CgConvergenceError(
            f"conjugate gradients stopped with code {info} before reaching "
            f"tolerance {config.cg_tol}")
    return p


def _initial_state(problem, lower, upper, warm, columns=None):
    """Cold-start state: boxed zero for x, matching row activities for y.

    ``lower``/``upper`` are vectors (single solve) or (n, K) matrices (batch).
    A warm state is used as given; batch solves broadcast a vector warm state
    to every column so each column starts exactly like its sequential solve.
    """
    n, m = problem.n, problem.m
    if warm is not None:
        if columns is None:
            return warm.copy()
        def tile(v, rows):
            v = np.asarray(v, dtype=float)
            if v.ndim == 1:
                return np.repeat(v[:, None], columns, axis=1)
            return v.copy()
        return AdmmState(tile(warm.x, n), tile(warm.y, m),
                         tile(warm.x_tilde, n), tile(warm.y_tilde, m),
                         tile(warm.lam_x, n), tile(warm.lam_y, m))

    if columns is None:
        x_t = np.clip(np.zeros(n), lower, upper)
        y = problem.A @ x_t
        y_t = np.clip(y, problem.b_l, problem.b_u)
        return AdmmState(x_t.copy(), y, x_t.copy(), y_t,
                         np.zeros(n), np.zeros(m))

    x_t = np.clip(np.zeros((n, columns)), lower, upper)
    # per-column products keep batch initialization bit-identical to sequential
    y = np.empty((m, columns))
    for k in range(columns):
        y[:, k] = problem.A @ x_t[:, k]
    y_t = np.clip(y, problem.b_l[:, None], problem.b_u[:, None])
    return AdmmState(x_t.copy(), y, x_t.copy(), y_t,
                     np.zeros((n, columns)), np.zeros((m, columns)))


def admm_step(problem, state, config, factor, lower=None, upper=None):
    """Advance the splitting iteration by one step, returning the new state
    and the (primal, dual) residuals.

    The recentered point r = (x~, y~) + lambda feeds the coupled minimization;
    its row block enters the KKT right-hand side and is added back to recover
    the row activities.  Projections use the pre-update multipliers, and the
    multiplier update subtracts the new consensus gap, which is the orientation
    under which the boxed fixed point is stationary.
    """
    lower = problem.l if lower is None else lower
    upper = problem.u if upper is None else upper
    rho = config.rho
    n = problem.n

    r_x = state.x_tilde + state.lam_x
    r_y = state.y_tilde + state.lam_y
    c = problem.c[:, None] if r_x.ndim == 2 else problem.c
    rhs = np.concatenate([r_x - c / rho, r_y], axis=0)
    sol = factor.solve(rhs)
    x = sol[:n]
    y = sol[n:] + r_y

    if r_x.ndim == 2:
        b_l, b_u = problem.b_l[:, None], problem.b_u[:, None]
    else:
        b_l, b_u = problem.b_l, problem.b_u
    x_tilde = np.clip(x - state.lam_x, lower, upper)
    y_tilde = np.clip(y - state.lam_y, b_l, b_u)

    lam_x = state.lam_x - (x - x_tilde)
    lam_y = state.lam_y - (y - y_tilde)

    gap_x = np.abs(x - x_tilde)
    gap_y = np.abs(y - y_tilde)
    move_x = np.abs(x_tilde - state.x_tilde)
    move_y = np.abs(y_tilde - state.y_tilde)
    if r_x.ndim == 2:
        primal = np.maximum(gap_x.max(axis=0, initial=0.0),
                            gap_y.max(axis=0, initial=0.0))
        dual = rho * np.maximum(move_x.max(axis=0, initial=0.0),
                                move_y.max(axis=0, initial=0.0))
    else:
        primal = max(gap_x.max(initial=0.0), gap_y.max(initial=0.0))
        dual = rho * max(move_x.max(initial=0.0), move_y.max(initial=0.0))

    return AdmmState(x, y, x_tilde, y_tilde, lam_x, lam_y), primal, dual


def admm_solve(problem, config=None, warm=None, factor=None):
    """Run the splitting solver to tolerance or the iteration cap.

    Returns an LpSolution whose ``x`` is the box-projected iterate (always
    bound-feasible) and whose ``state`` carries the full splitting state for
    warm-starting later solves.  Status is ``converged`` when both residuals
    reach their tolerances, ``max_iters`` otherwise, and ``unknown`` if the
    iterates stop being finite.
    """
    config = config or AdmmConfig()
    if np.any(problem.l > problem.u):
        raise ValueError("empty variable box: l > u")
    if factor is None:
        factor = factorize(problem, config)

    state = _initial_state(problem, problem.l, problem.u, warm)
    primal = dual = np.inf
    iters = 0
    for iters in range(1, config.max_iters + 1):
        state, primal, dual = admm_step(problem, state, config, factor)
        if not np.isfinite(state.x_tilde).all():
            return LpSolution(x=state.x_tilde, objective=np.nan, status=UNKNOWN,
                              iterations=iters, primal_residual=float("nan"),
                              dual_residual=float("nan"), state=state)
        if primal <= config.eps_primal and dual <= config.eps_dual:
            return LpSolution(
                x=state.x_tilde.copy(),
                objective=float(problem.c @ state.x_tilde),
                status=CONVERGED, iterations=iters,
                primal_residual=float(primal), dual_residual=float(dual),
                state=state)
    return LpSolution(
        x=state.x_tilde.copy(), objective=float(problem.c @ state.x_tilde),
        status=MAX_ITERS, iterations=iters,
        primal_residual=float(primal) if np.isfinite(primal) else float("inf"),
        dual_residual=float(dual) if np.isfinite(dual) else float("inf"),
        state=state)


def admm_solve_batch(problem, overrides, config=None, warm=None, factor=None):
    """Solve every bound variant of one LP in lockstep with shared factorization.

    ``overrides`` is a sequence of BoundOverride (or (index, lb, ub) tuples),
    one per variant; each variant differs from the base problem in exactly one
    variable's bounds.  All variants share one KKT factorization and advance
    together through matrix-valued iterations; a variant's state is snapshotted
    the first time its residuals reach tolerance, so in direct mode the k-th
    result is bit-for-bit the result of ``admm_solve`` on the k-th variant with
    the same config and warm start.
    """
    config = config or AdmmConfig()
    overrides = [ov if isinstance(ov, BoundOverride) else BoundOverride(*ov)
                 for ov in overrides]
    K = len(overrides)
    if K == 0:
        return []
    if factor is None:
        factor = factorize(problem, config)

    lower = np.repeat(problem.l[:, None], K, axis=1)
    upper = np.repeat(problem.u[:, None], K, axis=1)
    for k, ov in enumerate(overrides):
        lower[ov.index, k] = ov.lb
        upper[ov.index, k] = ov.ub
    if np.any(lower > upper):
        raise ValueError("empty variable box in at least one variant")

    state = _initial_state(problem, lower, upper, warm, columns=K)
    results: list[LpSolution | None] = [None] * K
    last_primal = np.full(K, np.inf)
    last_dual = np.full(K, np.inf)

    for it in range(1, config.max_iters + 1):
        state, primal, dual = admm_step(problem, state, config, factor,
                                        lower=lower, upper=upper)
        last_primal, last_dual = primal, dual
        done = (primal <= config.eps_primal) & (dual <= config.eps_dual)
        for k in np.flatnonzero(done):
            if results[k] is None:
                col = state.column(k)
                if not np.isfinite(col.x_tilde).all():
                    results[k] = LpSolution(col.x_tilde, np.nan, UNKNOWN, it,
                                            float("nan"), float("nan"), col)
                else:
                    results[k] = LpSolution(
                        col.x_tilde.copy(), float(problem.c @ col.x_tilde),
                        CONVERGED, it, float(primal[k]), float(dual[k]), col)
        if all(r is not None for r in results):
            break

    for k in range(K):
        if results[k] is None:
            col = state.column(k)
            if not np.isfinite(col.x_tilde).all():
                results[k] = LpSolution(col.x_tilde, np.nan, UNKNOWN,
                                        config.max_iters, float("nan"),
                                        float("nan"), col)
            else:
                results[k] = LpSolution(
                    col.x_tilde.copy(), float(problem.c @ col.x_tilde),
                    MAX_ITERS, config.max_iters,
                    float(last_primal[k]), float(last_dual[k]), col)
    return results


def warm_state_from_solution(problem, x_star, row_duals=None, rho=1.0):
    """Splitting state seeded from an LP solution.

    With only a primal point the multipliers start at zero.  Given row duals
    (stationarity convention c + A.T mu + eta = 0), the multipliers are set to
    their fixed-point values lam_x = (c + A.T mu) / rho and lam_y = -mu / rho,
    so a state built from an exact optimum is stationary under the iteration.
    """
    x = np.clip(np.asarray(x_star, dtype=float), problem.l, problem.u)
    y = problem.A @ x
    if row_duals is None:
        lam_x = np.zeros(problem.n)
        lam_y = np.zeros(problem.m)
    else:
        mu = np.asarray(row_duals, dtype=float)
        lam_x = (problem.c + problem.A.T @ mu) / rho
        lam_y = -mu / rho
    return AdmmState(x=x.copy(), y=y.copy(), x_tilde=x.copy(),
                     y_tilde=np.clip(y, problem.b_l, problem.b_u),
                     lam_x=lam_x, lam_y=lam_y)


#: Guard for the exact backend; simplex-grade solves are for desk-scale inputs.
EXACT_SIZE_LIMIT = 20000


def solve_lp_exact(problem, size_limit=EXACT_SIZE_LIMIT):
    """Exact LP optimum via a simplex-grade reference backend.

    Accepts an LpProblem or a MipInstance (integrality is dropped).  Two-sided
    rows become paired one-sided inequalities.  Infeasible and unbounded
    problems are reported as distinct statuses; an empty variable box raises.
    """
    if isinstance(problem, MipInstance):
        problem = LpProblem.from_instance(problem)
    if problem.n + problem.m > size_limit:
        raise ValueError(
            f"problem size {problem.n}+{problem.m} exceeds exact-backend limit "
            f"{size_limit}")
    if np.any(problem.l > problem.u):
        raise ValueError("empty variable box: l > u")

    A = problem.A.tocsr()
    rows_u = np.flatnonzero(np.isfinite(problem.b_u))
    rows_l = np.flatnonzero(np.isfinite(problem.b_l))
    blocks, rhs = [], []
    if rows_u.size:
        blocks.append(A[rows_u])
        rhs.append(problem.b_u[rows_u])
    if rows_l.size:
        blocks.append(-A[rows_l])
        rhs.append(-problem.b_l[rows_l])
    A_ub = sp.vstack(blocks, format="csr") if blocks else None
    b_ub = np.concatenate(rhs) if rhs else None

    bounds = [(li if np.isfinite(li) else None, ui if np.isfinite(ui) else None)
              for li, ui in zip(problem.l, problem.u)]
    res = linprog(problem.c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")

    if res.status == 0:
        x = np.clip(res.x, problem.l, problem.u)
        # fold the stacked one-sided marginals back onto the two-sided rows:
        # c + [A_u; -A_l].T lam + eta = 0 with lam = -marginals >= 0 gives
        # mu[rows_u] = -marg_u and mu[rows_l] = +marg_l in c + A.T mu + eta = 0
        mu = np.zeros(problem.m)
        if A_ub is not None:
            marg = np.asarray(res.ineqlin.marginals, dtype=float)
            k = 0
            if rows_u.size:
                mu[rows_u] += -marg[:rows_u.size]
                k = rows_u.size
            if rows_l.size:
                mu[rows_l] += marg[k:]
        return LpSolution(x=x, objective=float(problem.c @ x), status=CONVERGED,
                          iterations=int(getattr(res, "nit", 0) or 0),
                          row_duals=mu)
    if res.status == 2:
        return LpSolution(x=np.full(problem.n, np.nan), objective=np.nan,
                          status=INFEASIBLE)
    if res.status == 3:
        return LpSolution(x=np.full(problem.n, np.nan), objective=-np.inf,
                          status=UNBOUNDED)
    return LpSolution(x=np.full(problem.n, np.nan), objective=np.nan,
                      status=UNKNOWN)


def speedup_factor(n, t_single, t_batch):
    """How many sequential per-LP solves one batched solve replaces: n * t_single / t_batch."""
    if t_batch <= 0:
        raise ValueError("batch time must be positive")
    return n * t_single / t_batch


@dataclass
class BatchBenchResult:
    n_variants: int
    iterations: int
    t_single_seconds: float  # mean per-variant sequential time, fixed cost removed
    t_batch_seconds: float   # one batched solve, fixed cost removed
    speedup: float


def benchmark_batch(problem, overrides, config=None, warm=None):
    """Time sequential vs batched solving of the same bound variants.

    Fixed per-call cost (setup and factorization) is measured with
    zero-iteration runs and subtracted from both sides, isolating the
    per-iteration work that batching amortizes.
    """
    config = config or AdmmConfig()
    overrides = [ov if isinstance(ov, BoundOverride) else BoundOverride(*ov)
                 for ov in overrides]
    zero = replace(config, max_iters=0)

    def timed(fn):
        t0 = time.perf_counter()
        fn()
        return time.perf_counter() - t0

    variants = [problem.with_bounds(ov.index, ov.lb, ov.ub) for ov in overrides]
    t_seq_fixed = timed(lambda: [admm_solve(v, zero, warm=warm) for v in variants])
    t_seq_full = timed(lambda: [admm_solve(v, config, warm=warm) for v in variants])
    t_batch_fixed = timed(lambda: admm_solve_batch(problem, overrides, zero, warm=warm))
    t_batch_full = timed(lambda: admm_solve_batch(problem, overrides, config, warm=warm))

    n = len(overrides)
    t_single = max((t_seq_full - t_seq_fixed) / n, 1e-12)
    t_batch = max(t_batch_full - t_batch_fixed, 1e-12)
    return BatchBenchResult(
        n_variants=n, iterations=config.max_iters,
        t_single_seconds=t_single, t_batch_seconds=t_batch,
        speedup=speedup_factor(n, t_single, t_batch))

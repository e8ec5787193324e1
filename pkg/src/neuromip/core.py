"""Mixed-integer program instances and the operations every other module builds on.

The canonical problem form is

    minimize    c @ x
    subject to  b_l <= A @ x <= b_u
                l <= x <= u
                x[i] integral for i in the integer index set

with IEEE +/-inf encoding absent bounds.  One-sided rows are the special case
where the other side is infinite.  Instances are immutable by convention:
operations that derive a new problem (`apply_submip`, `permute_instance`)
return copies and never touch their input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

CONTINUOUS = "continuous"
INTEGER = "integer"
BINARY = "binary"

VAR_KINDS = (CONTINUOUS, INTEGER, BINARY)

#: Default tolerance for bound, row, and integrality violations.
FEASIBILITY_TOL = 1e-6


def integrality_violation(x):
    """Distance to the nearest integer, elementwise: min(x - floor(x), ceil(x) - x)."""
    x = np.asarray(x, dtype=float)
    return np.abs(x - np.round(x))


@dataclass
class MipInstance:
    """A mixed-integer program in the canonical two-sided form.

    Attributes
    ----------
    name : str
        Identifier carried through parsing, serialization, and reports.
    c : ndarray, shape (n,)
        Objective coefficients (minimization).
    A : scipy.sparse.csr_matrix, shape (m, n)
        Constraint matrix.
    b_l, b_u : ndarray, shape (m,)
        Row activity bounds; -inf / +inf for one-sided rows.
    l, u : ndarray, shape (n,)
        Variable bounds; -inf / +inf for free directions.
    var_kinds : ndarray of str, shape (n,)
        One of ``continuous``, ``integer``, ``binary`` per column.
    objective_constant : float
        Added to every reported objective value (an MPS file may carry one).
    """

    name: str
    c: np.ndarray
    A: sp.csr_matrix
    b_l: np.ndarray
    b_u: np.ndarray
    l: np.ndarray
    u: np.ndarray
    var_kinds: np.ndarray
    objective_constant: float = 0.0

    def __post_init__(self):
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        self.A = sp.csr_matrix(self.A, dtype=float)
        self.b_l = np.atleast_1d(np.asarray(self.b_l, dtype=float))
        self.b_u = np.atleast_1d(np.asarray(self.b_u, dtype=float))
        self.l = np.atleast_1d(np.asarray(self.l, dtype=float))
        self.u = np.atleast_1d(np.asarray(self.u, dtype=float))
        self.var_kinds = np.asarray(self.var_kinds, dtype="U16")
        self.objective_constant = float(self.objective_constant)

    @property
    def n(self):
        """Number of variables."""
        return self.c.shape[0]

    @property
    def m(self):
        """Number of rows."""
        return self.A.shape[0]

    @property
    def integer_indices(self):
        """Indices of columns with integrality requirements (integer or binary)."""
        return np.flatnonzero(self.var_kinds != CONTINUOUS)

    def copy(self):
        return MipInstance(
            name=self.name,
            c=self.c.copy(),
            A=self.A.copy(),
            b_l=self.b_l.copy(),
            b_u=self.b_u.copy(),
            l=self.l.copy(),
            u=self.u.copy(),
            var_kinds=self.var_kinds.copy(),
            objective_constant=self.objective_constant,
        )

    def equals(self, other):
        """Bit-exact structural equality (array contents, kinds, name, constant)."""
        if not isinstance(other, MipInstance):
            return False
        if self.name != other.name:
            return False
        if self.objective_constant != other.objective_constant:
            return False
        if self.A.shape != other.A.shape:
            return False
        a, b = self.A.tocsr(), other.A.tocsr()
        a.sum_duplicates(), b.sum_duplicates()
        a.sort_indices(), b.sort_indices()
        return (
            np.array_equal(self.c, other.c)
            and np.array_equal(self.b_l, other.b_l)
            and np.array_equal(self.b_u, other.b_u)
            and np.array_equal(self.l, other.l)
            and np.array_equal(self.u, other.u)
            and np.array_equal(self.var_kinds, other.var_kinds)
            and np.array_equal(a.indptr, b.indptr)
            and np.array_equal(a.indices, b.indices)
            and np.array_equal(a.data, b.data)
        )


@dataclass
class SubMipSpec:
    """A partial assignment: variables to fix and bound intervals to tighten.

    A variable may appear in at most one of the two maps.  Applying an empty
    spec reproduces the original instance.
    """

    fixings: dict = field(default_factory=dict)
    tightenings: dict = field(default_factory=dict)

    def is_empty(self):
        return not self.fixings and not self.tightenings


@dataclass
class Violation:
    """A single feasibility or validity defect, with its location and magnitude."""

    kind: str
    index: int
    amount: float
    message: str

    def __str__(self):
        return self.message


@dataclass
class FeasibilityReport:
    ok: bool
    violations: list


def validate(instance):
    """Check structural validity; returns a list of violation messages (empty = valid).

    Flags dimension mismatches, reversed bounds (l > u, b_l > b_u), NaNs, and
    non-finite objective or matrix entries.  Binary columns must have bounds
    within [0, 1].
    """
    problems = []
    n, m = instance.c.shape[0], instance.A.shape[0]
    if instance.A.shape[1] != n:
        problems.append(f"A has {instance.A.shape[1]} columns but c has {n} entries")
    for nm, arr, size in (
        ("b_l", instance.b_l, m),
        ("b_u", instance.b_u, m),
        ("l", instance.l, n),
        ("u", instance.u, n),
        ("var_kinds", instance.var_kinds, n),
    ):
        if arr.shape[0] != size:
            problems.append(f"{nm} has length {arr.shape[0]}, expected {size}")
    if problems:
        return problems  # size checks below assume consistent shapes

    if not np.all(np.isfinite(instance.c)):
        problems.append("objective contains non-finite entries")
    if instance.A.nnz and not np.all(np.isfinite(instance.A.data)):
        problems.append("constraint matrix contains non-finite entries")
    for nm, arr in (("b_l", instance.b_l), ("b_u", instance.b_u),
                    ("l", instance.l), ("u", instance.u)):
        if np.any(np.isnan(arr)):
            problems.append(f"{nm} contains NaN")
    bad = np.flatnonzero(instance.l > instance.u)
    for i in bad:
        problems.append(f"variable {i}: lower bound {instance.l[i]} exceeds upper {instance.u[i]}")
    bad = np.flatnonzero(instance.b_l > instance.b_u)
    for j in bad:
        problems.append(f"row {j}: lower side {instance.b_l[j]} exceeds upper {instance.b_u[j]}")
    unknown = np.flatnonzero(~np.isin(instance.var_kinds, VAR_KINDS))
    for i in unknown:
        problems.append(f"variable {i}: unknown kind {instance.var_kinds[i]!r}")
    binaries = np.flatnonzero(instance.var_kinds == BINARY)
    for i in binaries:
        if instance.l[i] < -FEASIBILITY_TOL or instance.u[i] > 1 + FEASIBILITY_TOL:
            problems.append(
                f"variable {i}: binary with bounds [{instance.l[i]}, {instance.u[i]}]"
            )
    return problems


def check_feasible(instance, x, tol=FEASIBILITY_TOL):
    """Test a full assignment against bounds, rows, and integrality.

    Returns a FeasibilityReport whose violations carry the offending index and
    the violation amount.  All checks use the same absolute tolerance.
    """
    x = np.asarray(x, dtype=float)
    violations = []
    if x.shape[0] != instance.n:
        return FeasibilityReport(False, [Violation(
            "shape", -1, 0.0, f"assignment has length {x.shape[0]}, expected {instance.n}")])

    below = instance.l - x
    above = x - instance.u
    for i in np.flatnonzero(below > tol):
        violations.append(Violation(
            "var_lower", int(i), float(below[i]),
            f"x[{i}] = {x[i]} below lower bound {instance.l[i]} by {below[i]:.3g}"))
    for i in np.flatnonzero(above > tol):
        violations.append(Violation(
            "var_upper", int(i), float(above[i]),
            f"x[{i}] = {x[i]} above upper bound {instance.u[i]} by {above[i]:.3g}"))

    ax = instance.A @ x
    row_below = instance.b_l - ax
    row_above = ax - instance.b_u
    for j in np.flatnonzero(row_below > tol):
        violations.append(Violation(
            "row_lower", int(j), float(row_below[j]),
            f"row {j} activity {ax[j]:.6g} below {instance.b_l[j]} by {row_below[j]:.3g}"))
    for j in np.flatnonzero(row_above > tol):
        violations.append(Violation(
            "row_upper", int(j), float(row_above[j]),
            f"row {j} activity {ax[j]:.6g} above {instance.b_u[j]} by {row_above[j]:.3g}"))

    ints = instance.integer_indices
    if ints.size:
        gap = integrality_violation(x[ints])
        for k in np.flatnonzero(gap > tol):
            i = ints[k]
            violations.append(Violation(
                "integrality", int(i), float(gap[k]),
                f"x[{i}] = {x[i]} violates integrality by {gap[k]:.3g}"))
    return FeasibilityReport(not violations, violations)


def objective_value(instance, x):
    """c @ x plus the instance's objective constant."""
    return float(instance.c @ np.asarray(x, dtype=float)) + instance.objective_constant


class LpBackendError(RuntimeError):
    """An LP backend reported an unusable status while completing an assignment."""


def energy(instance, integer_values, lp_backend=None, tol=FEASIBILITY_TOL):
    """Objective of the best completion of an integer assignment, +inf if infeasible.

    ``integer_values`` maps every integer-variable index to its value.  On a
    pure-integer instance the assignment is complete and the energy is its
    objective when feasible, +inf otherwise.  With continuous variables
    present, the integers are fixed and the continuous rest is completed by an
    LP solve: the energy is the completed objective, +inf when the completion
    is infeasible.  A backend failure (unknown status) raises LpBackendError
    rather than masquerading as infeasibility.

    ``lp_backend`` takes the fixed instance and returns an object with
    ``status`` (``converged`` / ``infeasible`` / ``unbounded`` / ``unknown``)
    and ``x``; defaults to the exact solver.
    """
    ints = instance.integer_indices
    missing = [int(i) for i in ints if int(i) not in integer_values]
    if missing:
        raise ValueError(f"integer assignment missing indices {missing}")
    for i, v in integer_values.items():
        if abs(v - round(v)) > tol:
            raise ValueError(f"integer variable {i} assigned non-integral value {v}")

    if ints.size == instance.n:
        x = np.zeros(instance.n)
        for i, v in integer_values.items():
            x[int(i)] = float(v)
        report = check_feasible(instance, x, tol=tol)
        return objective_value(instance, x) if report.ok else np.inf

    fixed = apply_submip(
        instance,
        SubMipSpec(fixings={int(i): float(round(v)) for i, v in integer_values.items()}),
        clip=True,
    )
    if lp_backend is None:
        from .lp import solve_lp_exact
        lp_backend = solve_lp_exact
    sol = lp_backend(fixed)
    if sol.status == "infeasible":
        return np.inf
    if sol.status not in ("converged", "optimal"):
        raise LpBackendError(f"LP completion failed with status {sol.status!r}")
    return objective_value(instance, sol.x)


def apply_submip(instance, spec, clip=False):
    """Apply fixings and bound tightenings, returning a new instance.

    Fix values must lie within the original bounds and be integral for integer
    variables; tightened intervals must be non-empty subsets of the original
    bounds.  A variable may not appear in both maps.  With ``clip=True``,
    out-of-range fixings and tightenings are clipped into the original bounds
    instead of raising (a sampled assignment may sit on a bound only up to
    rounding).
    """
    overlap = set(spec.fixings) & set(spec.tightenings)
    if overlap:
        raise ValueError(f"variables {sorted(overlap)} both fixed and tightened")
    out = instance.copy()
    ints = set(int(i) for i in instance.integer_indices)

    for i, v in spec.fixings.items():
        i, v = int(i), float(v)
        if not 0 <= i < instance.n:
            raise ValueError(f"fixing index {i} out of range")
        if i in ints and abs(v - round(v)) > FEASIBILITY_TOL:
            raise ValueError(f"fixing integer variable {i} to non-integral {v}")
        if clip:
            v = min(max(v, instance.l[i]), instance.u[i])
        elif v < instance.l[i] - FEASIBILITY_TOL or v > instance.u[i] + FEASIBILITY_TOL:
            raise ValueError(
                f"fixing x[{i}] = {v} outside bounds [{instance.l[i]}, {instance.u[i]}]")
        out.l[i] = out.u[i] = v

    for i, (lo, hi) in spec.tightenings.items():
        i, lo, hi = int(i), float(lo), float(hi)
        if not 0 <= i < instance.n:
            raise ValueError(f"tightening index {i} out of range")
        if clip:
            lo, hi = max(lo, instance.l[i]), min(hi, instance.u[i])
        elif lo < instance.l[i] - FEASIBILITY_TOL or hi > instance.u[i] + FEASIBILITY_TOL:
            raise ValueError(
                f"tightening x[{i}] to [{lo}, {hi}] escapes bounds "
                f"[{instance.l[i]}, {instance.u[i]}]")
        if lo > hi:
            raise ValueError(f"tightening x[{i}] to empty interval [{lo}, {hi}]")
        out.l[i], out.u[i] = lo, hi
    return out


def normalize_instance(instance):
    """Equivalent reformulation with unit-norm rows and objective.

    Every row of A (with its interval) is divided by its 2-norm, and c (with
    the objective constant) by ||c||_2.  The feasible set is untouched and the
    argmin unchanged; objective values scale by the single positive factor
    1 / ||c||_2.  Zero rows and a zero objective are left alone.  First-order
    LP methods run on these coefficients converge far more uniformly, so the
    fixed-iteration strong-branching suites use this form.
    """
    out = instance.copy()
    A = out.A.tocsr().astype(float)
    norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
    norms[norms == 0.0] = 1.0
    out.A = (sp.diags(1.0 / norms) @ A).tocsr()
    out.b_l = out.b_l / norms
    out.b_u = out.b_u / norms
    c_norm = float(np.linalg.norm(out.c))
    if c_norm > 0.0:
        out.c = out.c / c_norm
        out.objective_constant = out.objective_constant / c_norm
    return out


def permute_instance(instance, var_perm, row_perm):
    """Relabel variables and rows jointly; position k holds old index perm[k]."""
    var_perm = np.asarray(var_perm, dtype=int)
    row_perm = np.asarray(row_perm, dtype=int)
    A = instance.A.tocsr()[row_perm][:, var_perm].tocsr()
    return MipInstance(
        name=instance.name,
        c=instance.c[var_perm],
        A=A,
        b_l=instance.b_l[row_perm],
        b_u=instance.b_u[row_perm],
        l=instance.l[var_perm],
        u=instance.u[var_perm],
        var_kinds=instance.var_kinds[var_perm],
        objective_constant=instance.objective_constant,
    )

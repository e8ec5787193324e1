"""Model-guided diving: sample partial assignments, solve the sub-MIPs.

A trained model proposes, per integer variable, whether to touch it at all
(selective head) and what value to steer it toward (assignment or bit head).
Sampled fixings and tightenings become a restricted instance; solving a
diverse batch of such restrictions and keeping the best verified incumbent is
the whole primal heuristic.  Binary variables take a single 0/1 decision;
general integers walk their interval one binary-search step per predicted
bit, most significant first.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bnb import SolveResult, SolverLimits, relative_gap, solve
from .core import SubMipSpec, apply_submip, check_feasible, objective_value
from .gnn import (
    GcnModel,
    bit_probabilities,
    diving_probabilities,
    selection_probabilities,
)
from .graph import encode
from .lp import CONVERGED, solve_lp_exact

log = logging.getLogger(__name__)

STATUS_COMPLETED = "completed"


@dataclass
class DivingConfig:
    """Knobs for sub-MIP generation and orchestration."""

    samples_per_model: int = 1
    n_sub_seeds: int = 1            # extra RNG axis for sub-MIP diversity
    max_submips: int = 100
    n_bits: int = 8
    seed: int = 0
    mode: str = "sequential"
    bernoulli_values: bool = False  # draw values instead of rounding them

    def __post_init__(self):
        if self.max_submips < 1:
            raise ValueError("max_submips must be at least 1")


# -- predictors: where the probabilities come from -----------------------------


class ModelPredictor:
    """Head probabilities from a trained model, one forward pass per graph."""

    def __init__(self, model):
        self.model = model

    def select_probs(self, graph, indices):
        return selection_probabilities(self.model, graph, indices)

    def value_probs(self, graph, indices):
        return diving_probabilities(self.model, graph, indices)

    def bit_prob(self, graph, index, position, lb, ub):
        return float(bit_probabilities(self.model, graph, [index],
                                       [position])[0])


class OraclePredictor:
    """Probabilities read off a known assignment; selection fixed at p.

    With p = 1 every integer variable is driven exactly to the given
    assignment, so the first sub-MIP pins the known solution. Used to
    sanity-check the diving machinery independently of training.
    """

    def __init__(self, assignment, coverage=1.0):
        self.assignment = np.asarray(assignment, dtype=float)
        self.coverage = float(coverage)

    def select_probs(self, graph, indices):
        return np.full(len(indices), self.coverage)

    def value_probs(self, graph, indices):
        return self.assignment[np.asarray(indices, dtype=int)]

    def bit_prob(self, graph, index, position, lb, ub):
        return 1.0 if self.assignment[index] >= lb + math.ceil((ub - lb) / 2) \
            else 0.0


def _as_predictor(obj):
    return ModelPredictor(obj) if isinstance(obj, GcnModel) else obj


# -- the bit walk ---------------------------------------------------------------


def _split_up(lb, ub):
    """The interval after a 1 bit: lower bound jumps past the midpoint."""
    return lb + math.ceil((ub - lb) / 2), ub


def _split_down(lb, ub):
    """The interval after a 0 bit: upper bound drops to the midpoint."""
    return lb, lb + math.floor((ub - lb) / 2)


def bit_targets(lower, upper, value, n_bits):
    """The bit sequence that narrows [lower, upper] toward ``value``.

    Returns (positions, bits, final_interval): the supervised targets for the
    bit head, stopping when the interval collapses or the budget runs out.
    """
    lb, ub = int(lower), int(upper)
    value = int(round(value))
    if not lb <= value <= ub:
        raise ValueError(f"value {value} outside [{lb}, {ub}]")
    positions, bits = [], []
    pos = 0
    while lb < ub and pos < n_bits:
        if value >= lb + math.ceil((ub - lb) / 2):
            bits.append(1.0)
            lb, ub = _split_up(lb, ub)
        else:
            bits.append(0.0)
            lb, ub = _split_down(lb, ub)
        positions.append(pos)
        pos += 1
    return np.array(positions, dtype=int), np.array(bits), (lb, ub)


def _is_binary_interval(lb, ub):
    return lb == 0.0 and ub == 1.0


def sample_partial_assignment(predictor, instance, seed, n_bits=8,
                              bernoulli_values=False, lp_solution=None,
                              graph=None):
    """Draw one sub-MIP spec: per-variable stochastic fixings/tightenings.

    Each integer variable is touched with its selection probability.  Binary
    variables get fixed to round(mu) (or a Bernoulli draw of mu under the
    flag).  General integers walk bits most-significant first — a 1 bit
    raises the lower bound past the interval midpoint, a 0 bit lowers the
    upper bound onto it — stopping at the first unselected bit or after
    ``n_bits``; whatever narrowing happened is kept.  Variables with an
    infinite side are never touched.
    """
    predictor = _as_predictor(predictor)
    if graph is None:
        graph = encode(instance, lp_solution=lp_solution)
    rng = np.random.default_rng(seed)
    ints = instance.integer_indices
    spec = SubMipSpec()
    if ints.size == 0:
        return spec
    select_p = predictor.select_probs(graph, ints)
    value_p = predictor.value_probs(graph, ints)

    for k, i in enumerate(int(j) for j in ints):
        lb, ub = instance.l[i], instance.u[i]
        if not (np.isfinite(lb) and np.isfinite(ub)):
            continue
        if _is_binary_interval(lb, ub):
            if rng.random() >= select_p[k]:
                continue
            mu = value_p[k]
            value = float(rng.random() < mu) if bernoulli_values \
                else float(round(mu))
            spec.fixings[i] = value
            continue
        cur_lb, cur_ub = int(lb), int(ub)
        pos = 0
        while cur_lb < cur_ub and pos < n_bits:
            if rng.random() >= select_p[k]:
                break
            mu = predictor.bit_prob(graph, i, pos, cur_lb, cur_ub)
            bit = (rng.random() < mu) if bernoulli_values else (round(mu) == 1)
            if bit:
                cur_lb, cur_ub = _split_up(cur_lb, cur_ub)
            else:
                cur_lb, cur_ub = _split_down(cur_lb, cur_ub)
            pos += 1
        if cur_lb == cur_ub:
            spec.fixings[i] = float(cur_lb)
        elif (cur_lb, cur_ub) != (int(lb), int(ub)):
            spec.tightenings[i] = (float(cur_lb), float(cur_ub))

    for i, (lo, hi) in spec.tightenings.items():
        assert instance.l[i] <= lo <= hi <= instance.u[i], \
            f"tightening widened x[{i}]"
    return spec


def generate_submips(models, instance, config=None, lp_solution=None):
    """The spec list one dive works through: models x samples x sub-seeds.

    Deterministic given config.seed; the cross product is truncated to
    ``max_submips`` and exact duplicate specs are collapsed (order kept).
    ``lp_solution`` (the root relaxation) feeds the graph's LP features; when
    omitted it is computed here, or skipped if the relaxation fails.
    """
    config = config or DivingConfig()
    predictors = [_as_predictor(m) for m in
                  (models.values() if isinstance(models, dict) else models)]
    if not predictors:
        raise ValueError("need at least one model")
    if lp_solution is None:
        sol = solve_lp_exact(instance)
        lp_solution = sol.x if sol.status == CONVERGED else None
    graph = encode(instance, lp_solution=lp_solution)

    specs = []
    for sub_seed in range(config.n_sub_seeds):
        for m_idx, predictor in enumerate(predictors):
            for s in range(config.samples_per_model):
                seed = (config.seed * 1_000_003 + sub_seed * 10_007
                        + m_idx * 101 + s)
                specs.append(sample_partial_assignment(
                    predictor, instance, seed, n_bits=config.n_bits,
                    bernoulli_values=config.bernoulli_values, graph=graph))
                if len(specs) >= config.max_submips:
                    break
            if len(specs) >= config.max_submips:
                break
        if len(specs) >= config.max_submips:
            break

    seen = set()
    unique = []
    for spec in specs:
        key = (tuple(sorted(spec.fixings.items())),
               tuple(sorted(spec.tightenings.items())))
        if key not in seen:
            seen.add(key)
            unique.append(spec)
    return unique


# -- orchestration --------------------------------------------------------------


@dataclass
class _Best:
    x: np.ndarray | None = None
    objective: float = np.inf
    events: list = field(default_factory=list)


def _consider(best, instance, result, offset):
    """Fold one sub-solve into the running best, verifying on the original."""
    if result.incumbent is None:
        return
    report = check_feasible(instance, result.incumbent)
    if not report.ok:
        log.warning("sub-MIP incumbent infeasible on original instance; dropped")
        return
    obj = objective_value(instance, result.incumbent)
    if obj < best.objective:
        best.objective = obj
        best.x = np.asarray(result.incumbent, dtype=float).copy()
    # replay this run's primal improvements on the shared time axis
    for elapsed, primal, _dual in result.event_log:
        if np.isfinite(primal):
            best.events.append((offset + elapsed, primal))


def _merged_result(best, node_count, elapsed):
    events = []
    running = np.inf
    for t, primal in sorted(best.events):
        if primal < running:
            running = primal
            events.append((t, primal, -np.inf))
    return SolveResult(
        status=STATUS_COMPLETED,
        incumbent=best.x,
        primal_bound=best.objective,
        dual_bound=-np.inf,
        node_count=node_count,
        event_log=events,
        elapsed_seconds=elapsed,
        gap=relative_gap(best.objective, -np.inf),
    )


def dive_sequential(instance, specs, limits=None, seed=0, clock=None):
    """Solve the sub-MIPs one by one under a shared time budget.

    Specs are shuffled with the seeded generator, each sub-solve gets an
    equal slice of the remaining time (unused time rolls over), and the best
    incumbent — always verified against the original, un-tightened instance —
    wins.  A failing sub-solve is logged and skipped.  With no specs at all,
    falls back to one plain solve of the original instance.
    """
    import time as _time

    limits = limits or SolverLimits()
    clock = clock or _time.monotonic
    if not specs:
        return solve(instance, limits=limits, seed=seed, clock=clock)

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(specs))
    start = clock()
    best = _Best()
    nodes = 0
    for pos, spec_idx in enumerate(order):
        spec = specs[int(spec_idx)]
        sub_limits = SolverLimits(max_nodes=limits.max_nodes,
                                  target_gap=limits.target_gap)
        offset = clock() - start
        if limits.max_time is not None:
            remaining = limits.max_time - offset
            if remaining <= 0:
                break
            sub_limits.max_time = remaining / (len(order) - pos)
        try:
            sub = apply_submip(instance, spec, clip=True)
            result = solve(sub, limits=sub_limits, seed=seed + 1 + pos,
                           clock=clock)
        except ValueError as exc:
            log.warning("sub-MIP solve failed (%s); continuing", exc)
            continue
        nodes += result.node_count
        _consider(best, instance, result, offset)
    return _merged_result(best, nodes, clock() - start)


def dive_parallel(instance, specs, limits=None, seed=0, max_workers=None):
    """Solve every sub-MIP as an independent task and merge the curves.

    Each task runs with private state and its own clock, so the merged event
    log — pointwise best primal over all runs, ordered by each run's own
    elapsed time — does not depend on scheduling.  Every run gets the full
    time budget, mirroring concurrent execution on separate machines.
    """
    limits = limits or SolverLimits()
    if not specs:
        return solve(instance, limits=limits, seed=seed)

    def task(pos_spec):
        pos, spec = pos_spec
        try:
            sub = apply_submip(instance, spec, clip=True)
            return solve(sub, limits=limits, seed=seed + 1 + pos)
        except ValueError as exc:
            log.warning("sub-MIP solve failed (%s); continuing", exc)
            return None

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(pool.map(task, enumerate(specs)))

    best = _Best()
    nodes = 0
    elapsed = 0.0
    for result in results:
        if result is None:
            continue
        nodes += result.node_count
        elapsed = max(elapsed, result.elapsed_seconds)
        _consider(best, instance, result, 0.0)
    return _merged_result(best, nodes, elapsed)

"""Command-line suite wiring the toolkit into one end-to-end pipeline.

Commands: convert, validate, solve, lp-bench, gen-data, train, dive,
cut-select, eval, pipeline.  Every command accepts ``--config FILE`` (a JSON
object whose keys are the command's option names with underscores); explicit
flags override the file, the file overrides built-in defaults.  Each command
prints the path of its primary artifact on stdout.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 internal error.
"""

import argparse
import csv
import json
import logging
import math
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .bnb import SolverLimits, lp_bound_with_cuts, make_policy, select_cuts_expert, solve
from .core import CONTINUOUS, MipInstance, validate
from .diving import DivingConfig, dive_parallel, dive_sequential, generate_submips
from .evaluation import (
    EVALUATION_SEEDS,
    CalibratedClock,
    CalibrationConfig,
    average_curve,
    build_gap_curve,
    par_k,
    plot_curves,
    survival,
    time_to_target,
)
from .generators import FAMILIES, generate_family
from .gnn import (
    BranchingExample,
    GcnConfig,
    LearnedBranchingPolicy,
    TrainConfig,
    init_model,
    load_model,
    save_model,
    train,
    train_coverage_suite,
)
from .imitation import (
    build_diving_dataset,
    collect_diving_labels,
    generate_branching_data,
    load_dataset,
    save_dataset,
)
from .lp import AdmmConfig, BoundOverride, LpProblem, admm_solve, admm_solve_batch, benchmark_batch
from .mpsio import MpsParseError, read_canonical, read_mps, write_canonical

log = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

RUN_FORMAT = "neuromip-run"
RUN_VERSION = 1


class UsageError(Exception):
    """Bad flags or flag combinations (exit 1)."""


class DataError(Exception):
    """Missing files, unreadable formats, schema mismatches (exit 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we reserve 2 for data
        raise UsageError(message)


# -- small shared helpers -------------------------------------------------------


def _enc(value):
    """JSON-safe float: infinities and NaN become strings."""
    v = float(value)
    if math.isfinite(v):
        return v
    if math.isnan(v):
        return "nan"
    return "inf" if v > 0 else "-inf"


def _dec(value):
    return float(value)


def _safe(name):
    return re.sub(r"[^\w.+-]+", "_", str(name)) or "instance"


def _load_json(path, what="file"):
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{what} not found: {path}")
    try:
        with open(p) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{what} {path} is not valid JSON: {exc}") from None


def _dump_json(doc, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    return path


def _settings(args, defaults):
    """Layered options: built-in defaults, then config file, then flags."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        doc = _load_json(args.config, what="config file")
        if not isinstance(doc, dict):
            raise DataError(f"config file {args.config} must hold a JSON object")
        unknown = sorted(set(doc) - set(defaults))
        if unknown:
            raise DataError(
                f"config file {args.config} has unknown keys {unknown}; "
                f"this command accepts {sorted(defaults)}")
        merged.update(doc)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return argparse.Namespace(**merged)


def _load_instance(path):
    p = Path(path)
    if not p.is_file():
        raise DataError(f"instance file not found: {path}")
    try:
        if p.suffix.lower() == ".mps":
            return read_mps(p)
        if p.suffix.lower() == ".json":
            return read_canonical(p)
    except MpsParseError as exc:
        raise DataError(f"{path}: {exc}") from None
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{path} is not a readable instance: {exc}") from None
    raise DataError(f"unrecognized instance format (want .mps or .json): {path}")


def _parse_family(spec):
    """``kind:count[:key=value...]`` -> (kind, count, params)."""
    parts = spec.split(":")
    kind = parts[0].replace("-", "_").replace("setcover", "set_cover")
    if kind not in FAMILIES or len(parts) < 2:
        return None
    try:
        count = int(parts[1])
        params = {}
        for item in parts[2:]:
            key, _, value = item.partition("=")
            params[key] = float(value) if "." in value else int(value)
    except ValueError:
        return None
    return kind, count, params


def _resolve_instances(source, materialize_dir=None):
    """A directory of .mps/.json files, one file, or a family spec.

    Family specs read ``kind:count[:seed=S:param=V...]`` and draw from the
    bundled synthetic generators; with ``materialize_dir`` the drawn
    instances are also written out as canonical JSON for inspection.
    """
    p = Path(source)
    if p.is_dir():
        paths = sorted(list(p.glob("*.mps")) + list(p.glob("*.json")))
        paths = [q for q in paths if not q.name.endswith(".index.json")]
        if not paths:
            raise DataError(f"no .mps or .json instances under {source}")
        return [_load_instance(q) for q in paths]
    if p.is_file():
        return [_load_instance(p)]
    family = _parse_family(source)
    if family is None:
        raise DataError(
            f"instance source not found: {source} (expected a directory, a "
            f"file, or a family spec like 'set_cover:8:seed=3')")
    kind, count, params = family
    seed = params.pop("seed", 0)
    instances = generate_family(kind, count, seed=seed, **params)
    if materialize_dir is not None:
        materialize_dir = Path(materialize_dir)
        materialize_dir.mkdir(parents=True, exist_ok=True)
        for inst in instances:
            write_canonical(inst, materialize_dir / f"{_safe(inst.name)}.json")
    return instances


def _parallel_map(fn, items, jobs):
    items = list(items)
    if jobs and jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _parse_float_list(value):
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    try:
        return [float(tok) for tok in str(value).split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of numbers, got {value!r}")


def _write_run(out_dir, stem, instance, result, label, policy, seed, extra=None):
    """One solve's record: a JSON document plus the raw event CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "format": RUN_FORMAT,
        "version": RUN_VERSION,
        "instance": instance.name,
        "label": label,
        "policy": policy,
        "seed": int(seed),
        "status": result.status,
        "primal_bound": _enc(result.primal_bound),
        "dual_bound": _enc(result.dual_bound),
        "gap": _enc(result.gap),
        "node_count": int(result.node_count),
        "elapsed_seconds": float(result.elapsed_seconds),
        "incumbent": (None if result.incumbent is None
                      else [float(v) for v in result.incumbent]),
        "events": [[float(t), _enc(p), _enc(d)] for t, p, d in result.event_log],
    }
    doc.update(extra or {})
    run_path = _dump_json(doc, out_dir / f"{stem}.json")
    with open(out_dir / f"{stem}.events.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["elapsed", "primal", "dual"])
        for t, p, d in result.event_log:
            writer.writerow([repr(float(t)), repr(float(p)), repr(float(d))])
    return run_path


def _read_run(path):
    doc = _load_json(path, what="run file")
    if doc.get("format") != RUN_FORMAT:
        raise DataError(f"{path} is not a run record "
                        f"(format {doc.get('format')!r})")
    return doc


def _limits(settings):
    return SolverLimits(max_time=settings.time_limit,
                        max_nodes=settings.node_limit,
                        target_gap=settings.target_gap)


# -- convert / validate ---------------------------------------------------------

CONVERT_DEFAULTS = {"out": None}


def cmd_convert(args):
    s = _settings(args, CONVERT_DEFAULTS)
    instance = _load_instance(args.instance)
    problems = validate(instance)
    if problems:
        raise DataError(f"{args.instance} failed validation: " + "; ".join(problems))
    out = Path(s.out) if s.out else Path(args.instance).with_suffix(".json")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_canonical(instance, out)
    return out


VALIDATE_DEFAULTS = {"out": None}


def cmd_validate(args):
    s = _settings(args, VALIDATE_DEFAULTS)
    instance = _load_instance(args.instance)
    problems = validate(instance)
    out = Path(s.out) if s.out else Path(args.instance).with_suffix(".validation.json")
    _dump_json({
        "format": "neuromip-validation",
        "version": 1,
        "instance": instance.name,
        "ok": not problems,
        "problems": problems,
        "n_variables": int(instance.n),
        "n_rows": int(instance.m),
    }, out)
    if problems:
        print(out)
        raise DataError(f"{args.instance} failed validation with "
                        f"{len(problems)} problem(s); see {out}")
    return out


# -- solve ----------------------------------------------------------------------

SOLVE_DEFAULTS = {
    "policy": "most_fractional", "seed": 1, "time_limit": None,
    "node_limit": None, "target_gap": None, "label": None,
    "calibrated": False, "out": ".",
}


def cmd_solve(args):
    s = _settings(args, SOLVE_DEFAULTS)
    instance = _load_instance(args.instance)
    try:
        policy = make_policy(s.policy)
    except ValueError as exc:
        raise UsageError(str(exc))
    clock = None
    extra = {"clock": "wall"}
    if s.calibrated:
        clock = CalibratedClock(CalibrationConfig())
        clock.start()
    try:
        result = solve(instance, policy=policy, limits=_limits(s),
                       seed=s.seed, clock=clock)
    finally:
        if clock is not None:
            clock.stop()
    if clock is not None:
        extra = {"clock": "calibrated", "wall_fallback": clock.wall_fallback}
    label = s.label or str(s.policy)
    stem = f"{_safe(instance.name)}.{_safe(label)}.seed{s.seed}"
    return _write_run(s.out, stem, instance, result, label, str(s.policy),
                      s.seed, extra)


# -- lp-bench -------------------------------------------------------------------

LP_BENCH_DEFAULTS = {
    "variants": 64, "iterations": 200, "rho": 1.0, "seed": 0,
    "out": "lp_bench.json",
}


def cmd_lp_bench(args):
    s = _settings(args, LP_BENCH_DEFAULTS)
    instance = _load_instance(args.instance)
    problem = LpProblem.from_instance(instance)
    width = problem.u - problem.l
    movable = np.flatnonzero(np.isfinite(width) & (width > 0))
    if movable.size == 0:
        raise DataError(f"{args.instance} has no finitely-bounded variables "
                        f"to build bound variants from")
    rng = np.random.default_rng(s.seed)
    overrides = []
    for _ in range(int(s.variants)):
        i = int(rng.choice(movable))
        split = problem.l[i] + width[i] * rng.uniform(0.25, 0.75)
        if rng.random() < 0.5:
            overrides.append(BoundOverride(i, float(split), float(problem.u[i])))
        else:
            overrides.append(BoundOverride(i, float(problem.l[i]), float(split)))
    config = AdmmConfig(max_iters=int(s.iterations), rho=float(s.rho))
    batch = admm_solve_batch(problem, overrides, config)
    sequential = [admm_solve(problem.with_bounds(ov.index, ov.lb, ov.ub), config)
                  for ov in overrides]
    identical = all(np.array_equal(a.x, b.x)
                    for a, b in zip(batch, sequential))
    bench = benchmark_batch(problem, overrides, config)
    out = _dump_json({
        "format": "neuromip-lp-bench",
        "version": 1,
        "instance": instance.name,
        "n_variants": bench.n_variants,
        "iterations": bench.iterations,
        "identical": bool(identical),
        "t_single_seconds": bench.t_single_seconds,
        "t_batch_seconds": bench.t_batch_seconds,
        "speedup": bench.speedup,
    }, s.out)
    return out


# -- gen-data -------------------------------------------------------------------

GEN_DATA_DEFAULTS = {
    "kind": None, "instances": None, "out": "datasets", "seed": 0, "jobs": 1,
    "backend": "exact", "random_prob": 0.1, "repeats": 5, "node_limit": None,
    "skip_random_nodes": False, "n_bits": 8,
}


def _branching_examples(instances, s):
    def one(pair):
        idx, inst = pair
        return generate_branching_data(
            [inst], backend=s.backend, random_prob=s.random_prob,
            repeats=s.repeats, node_limit=s.node_limit,
            seed=s.seed + 1000 * idx, skip_random_nodes=s.skip_random_nodes)

    chunks = _parallel_map(one, enumerate(instances), s.jobs)
    return [ex for chunk in chunks for ex in chunk]


def _diving_examples(instances, s):
    limits = SolverLimits(max_nodes=s.node_limit)

    def one(pair):
        idx, inst = pair
        labels = collect_diving_labels([inst], limits=limits, seed=s.seed + idx)
        return build_diving_dataset([inst], labels, n_bits=s.n_bits)

    chunks = _parallel_map(one, enumerate(instances), s.jobs)
    return [ex for chunk in chunks for ex in chunk]


def cmd_gen_data(args):
    s = _settings(args, GEN_DATA_DEFAULTS)
    if s.kind not in ("branching", "diving"):
        raise UsageError("--kind must be 'branching' or 'diving'")
    if not s.instances:
        raise UsageError("--instances is required")
    out_dir = Path(s.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    instances = _resolve_instances(s.instances)
    if s.kind == "branching":
        examples = _branching_examples(instances, s)
    else:
        examples = _diving_examples(instances, s)
    if not examples:
        raise DataError("no training examples were produced; the instances "
                        "may solve at the root or be infeasible")
    path = out_dir / f"{s.kind}.jsonl"
    save_dataset(examples, path)
    return path


# -- train ----------------------------------------------------------------------

TRAIN_DEFAULTS = {
    "data": None, "out": "model.npz", "steps": 200, "lr": 1e-4,
    "batch_size": 8, "seed": 0, "coverage": None, "coverages": None,
    "penalty_weight": 32.0, "hidden": 64, "layers": 4, "loss_csv": None,
}


def cmd_train(args):
    s = _settings(args, TRAIN_DEFAULTS)
    if not s.data:
        raise UsageError("--data is required")
    if not Path(s.data).is_file():
        raise DataError(f"dataset not found: {s.data}")
    try:
        examples = load_dataset(s.data)
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"{s.data} is not a readable dataset: {exc}") from None
    if not examples:
        raise DataError(f"dataset {s.data} is empty")
    kinds = {type(ex) for ex in examples}
    if len(kinds) > 1:
        raise DataError(f"dataset {s.data} mixes example kinds")
    is_branching = kinds == {BranchingExample}
    coverages = _parse_float_list(s.coverages)
    if is_branching and (s.coverage is not None or coverages):
        raise UsageError("coverage settings apply to diving data only")

    model_config = GcnConfig(hidden=s.hidden, layers=s.layers)
    if s.loss_csv:
        Path(s.loss_csv).parent.mkdir(parents=True, exist_ok=True)
    base = TrainConfig(lr=s.lr, batch_size=s.batch_size, steps=s.steps,
                       seed=s.seed, coverage=s.coverage,
                       penalty_weight=s.penalty_weight, loss_csv=s.loss_csv)
    if coverages:
        out_dir = Path(s.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        suite = train_coverage_suite(examples, coverages, base_config=base,
                                     seed=s.seed, model_config=model_config)
        manifest = {"format": "neuromip-models", "version": 1, "models": {}}
        for cov, model in suite.items():
            name = f"diving-c{100 * cov:g}.npz"
            save_model(model, out_dir / name)
            manifest["models"][repr(float(cov))] = name
        return _dump_json(manifest, out_dir / "models.json")

    out = Path(s.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model = train(init_model(model_config, seed=s.seed), examples, base)
    save_model(model, out)
    return out


# -- dive -----------------------------------------------------------------------

DIVE_DEFAULTS = {
    "models": None, "mode": "seq", "budget": None, "time_limit": None,
    "node_limit": None, "target_gap": None, "seed": 1, "samples": 1,
    "sub_seeds": 1, "max_submips": 100, "n_bits": 8, "bernoulli": False,
    "out": ".", "label": "dive", "jobs": None,
}


def _find_models(source):
    p = Path(source)
    if p.is_dir():
        paths = sorted(p.glob("*.npz"))
        if not paths:
            raise DataError(f"no .npz model files under {source}")
        return paths
    paths = [Path(tok) for tok in str(source).split(",") if tok.strip()]
    for q in paths:
        if not q.is_file():
            raise DataError(f"model file not found: {q}")
    return paths


def cmd_dive(args):
    s = _settings(args, DIVE_DEFAULTS)
    if not s.models:
        raise UsageError("--models is required")
    if s.mode not in ("seq", "par"):
        raise UsageError("--mode must be 'seq' or 'par'")
    instance = _load_instance(args.instance)
    model_paths = _find_models(s.models)
    try:
        models = [load_model(p) for p in model_paths]
    except ValueError as exc:
        raise DataError(str(exc)) from None
    config = DivingConfig(samples_per_model=s.samples, n_sub_seeds=s.sub_seeds,
                          max_submips=s.max_submips, n_bits=s.n_bits,
                          seed=s.seed, mode=s.mode,
                          bernoulli_values=s.bernoulli)
    specs = generate_submips(models, instance, config)
    limits = SolverLimits(max_time=s.budget if s.budget is not None else s.time_limit,
                          max_nodes=s.node_limit,
                          target_gap=s.target_gap)
    if s.mode == "par":
        result = dive_parallel(instance, specs, limits=limits, seed=s.seed,
                               max_workers=s.jobs)
    else:
        result = dive_sequential(instance, specs, limits=limits, seed=s.seed)
    stem = f"{_safe(instance.name)}.{_safe(s.label)}.seed{s.seed}"
    extra = {"n_submips": len(specs),
             "models": [str(p) for p in model_paths]}
    return _write_run(s.out, stem, instance, result, s.label,
                      f"dive-{s.mode}", s.seed, extra)


# -- cut-select -----------------------------------------------------------------

CUT_SELECT_DEFAULTS = {
    "pool": None, "k": None, "seed": 0, "node_limit": None,
    "out": "cut_selection.json",
}


def _one_sided_form(instance):
    """Equivalent LP with A x <= b rows only and free variables.

    Finite variable bounds and the lower sides of two-sided rows become
    explicit rows, which is the shape the dual-based cut selection needs.
    """
    blocks, rhs = [], []
    n = instance.n
    A = instance.A.tocsr()
    finite_u = np.flatnonzero(np.isfinite(instance.b_u))
    if finite_u.size:
        blocks.append(A[finite_u])
        rhs.append(instance.b_u[finite_u])
    finite_l = np.flatnonzero(np.isfinite(instance.b_l))
    if finite_l.size:
        blocks.append(-A[finite_l])
        rhs.append(-instance.b_l[finite_l])
    for bound, sign in ((instance.u, 1.0), (instance.l, -1.0)):
        idx = np.flatnonzero(np.isfinite(bound))
        if idx.size:
            blocks.append(sp.csr_matrix(
                (np.full(idx.size, sign), (np.arange(idx.size), idx)),
                shape=(idx.size, n)))
            rhs.append(sign * bound[idx])
    if not blocks:
        raise DataError(f"{instance.name} has no finite rows or bounds; the "
                        f"relaxation is unbounded")
    M = sp.vstack(blocks).tocsr()
    b = np.concatenate(rhs)
    return MipInstance(
        name=f"{instance.name}-one-sided", c=instance.c.copy(), A=M,
        b_l=np.full(M.shape[0], -np.inf), b_u=b,
        l=np.full(n, -np.inf), u=np.full(n, np.inf),
        var_kinds=np.array([CONTINUOUS] * n, dtype="U16"),
        objective_constant=instance.objective_constant)


def cmd_cut_select(args):
    s = _settings(args, CUT_SELECT_DEFAULTS)
    if not s.pool:
        raise UsageError("--pool is required")
    if s.k is None:
        raise UsageError("--k is required")
    instance = _load_instance(args.instance)
    doc = _load_json(s.pool, what="cut pool")
    try:
        A_hat = np.asarray(doc["rows"], dtype=float)
        b_hat = np.asarray(doc["rhs"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"cut pool {s.pool} needs 'rows' (matrix) and 'rhs' "
                        f"(vector): {exc}") from None
    if A_hat.ndim != 2 or b_hat.ndim != 1 or A_hat.shape[0] != b_hat.shape[0]:
        raise DataError(f"cut pool {s.pool} has inconsistent shapes "
                        f"{A_hat.shape} vs {b_hat.shape}")
    if A_hat.shape[1] != instance.n:
        raise DataError(f"cut pool rows have {A_hat.shape[1]} coefficients "
                        f"but {args.instance} has {instance.n} variables")
    one_sided = _one_sided_form(instance)
    try:
        selection = select_cuts_expert(
            one_sided, (A_hat, b_hat), k=int(s.k), seed=s.seed,
            limits=SolverLimits(max_nodes=s.node_limit))
    except ValueError as exc:
        raise DataError(str(exc)) from None
    check = lp_bound_with_cuts(one_sided, (A_hat, b_hat), selection.selected)
    return _dump_json({
        "format": "neuromip-cut-selection",
        "version": 1,
        "instance": instance.name,
        "k": int(s.k),
        "pool_size": int(b_hat.shape[0]),
        "selected": selection.selected,
        "bound": _enc(selection.bound),
        "bound_check": _enc(check),
        "selection_nodes": int(selection.result.node_count),
    }, s.out)


# -- eval -----------------------------------------------------------------------

EVAL_DEFAULTS = {
    "runs": None, "out": "eval", "best_known": None, "target_gap": 0.0,
    "kind": "primal_dual", "time_limit": 10000.0, "k": 10,
}


def _evaluate_runs(runs_dir, out_dir, best_known=None, kind="primal_dual",
                   target_gap=0.0, time_limit=10000.0, k=10):
    """Gap curves per run, averages and survival per label, and a PAR table."""
    runs_dir = Path(runs_dir)
    if not runs_dir.is_dir():
        raise DataError(f"runs directory not found: {runs_dir}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    best = dict(best_known or {})

    per_label = {}
    curve_files = []
    for path in sorted(runs_dir.glob("*.json")):
        try:
            doc = _read_run(path)
        except DataError:
            continue  # unrelated JSON living in the same directory
        events = [(float(t), _dec(p), _dec(d)) for t, p, d in doc["events"]]
        p_star = best.get(doc["instance"])
        curve = build_gap_curve(events, p_star=p_star, kind=kind)
        label = doc.get("label") or "run"
        per_label.setdefault(label, []).append(curve)
        curve_path = out_dir / f"curve_{path.stem}.csv"
        _write_curve_csv(curve, curve_path, value_column="gap")
        curve_files.append(str(curve_path.name))
    if not per_label:
        raise DataError(f"no run records found under {runs_dir}")

    par_rows = []
    artifacts = {"curves": curve_files, "average": {}, "survival": {}}
    averages, survivals = {}, {}
    for label in sorted(per_label):
        curves = per_label[label]
        averages[label] = average_curve(curves)
        survivals[label] = survival(curves, target_gap)
        avg_path = out_dir / f"average_{_safe(label)}.csv"
        sur_path = out_dir / f"survival_{_safe(label)}.csv"
        _write_curve_csv(averages[label], avg_path, value_column="gap")
        _write_curve_csv(survivals[label], sur_path, value_column="fraction")
        artifacts["average"][label] = str(avg_path.name)
        artifacts["survival"][label] = str(sur_path.name)
        times = [time_to_target(c, target_gap, time_limit) for c in curves]
        solved = sum(t is not None for t in times)
        par_rows.append((label, len(curves), solved,
                         par_k(curves, time_limit=time_limit, k=k,
                               target_gap=target_gap)))

    par_path = out_dir / f"par{k}.csv"
    with open(par_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "runs", "solved", f"par{k}"])
        for label, n_runs, solved, value in par_rows:
            writer.writerow([label, n_runs, solved, repr(float(value))])

    labels = sorted(per_label)
    gaps_svg = out_dir / "gap_average.svg"
    survival_svg = out_dir / "survival.svg"
    plot_curves([averages[lb] for lb in labels], labels, gaps_svg,
                title=f"average {kind} gap")
    plot_curves([survivals[lb] for lb in labels], labels, survival_svg,
                title=f"fraction solved to gap {target_gap:g}", log_log=False)

    manifest = {
        "format": "neuromip-eval",
        "version": 1,
        "kind": kind,
        "target_gap": target_gap,
        "time_limit": time_limit,
        "par_k": k,
        "par": {label: _enc(value) for label, _, _, value in par_rows},
        "solved": {label: [n_runs, solved]
                   for label, n_runs, solved, _ in par_rows},
        "artifacts": artifacts,
        "plots": [gaps_svg.name, survival_svg.name],
    }
    return _dump_json(manifest, out_dir / "eval.json")


def _write_curve_csv(curve, path, value_column):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", value_column])
        for t, v in curve.breakpoints:
            writer.writerow([repr(float(t)), repr(float(v))])


def cmd_eval(args):
    s = _settings(args, EVAL_DEFAULTS)
    runs = s.runs or getattr(args, "runs_pos", None)
    if not runs:
        raise UsageError("a runs directory is required (positional or --runs)")
    if s.kind not in ("primal", "dual", "primal_dual"):
        raise UsageError("--kind must be primal, dual, or primal_dual")
    best = {}
    if s.best_known:
        doc = _load_json(s.best_known, what="best-known file")
        if not isinstance(doc, dict):
            raise DataError(f"best-known file {s.best_known} must map "
                            f"instance names to objectives")
        best = {str(name): _dec(value) for name, value in doc.items()}
    return _evaluate_runs(runs, s.out, best_known=best, kind=s.kind,
                          target_gap=s.target_gap, time_limit=s.time_limit,
                          k=int(s.k))


# -- pipeline -------------------------------------------------------------------

PIPELINE_DEFAULTS = {
    "out": "pipeline-out", "seed": 0, "jobs": 1, "train_fraction": 0.5,
    "backend": "exact", "random_prob": 0.1, "repeats": 2,
    "gen_node_limit": 200, "n_bits": 8,
    "steps": 150, "lr": 1e-3, "batch_size": 8, "hidden": 16, "layers": 2,
    "coverages": "0.25,0.5", "penalty_weight": 32.0,
    "samples": 2, "sub_seeds": 1, "max_submips": 20,
    "n_seeds": 5, "time_limit": None, "node_limit": 2000, "budget": None,
    "target_gap": None, "kind": "primal", "par_time_limit": 10000.0, "k": 10,
}


def _split_instances(instances, train_fraction, seed):
    if len(instances) == 1:
        return list(instances), list(instances)
    order = np.random.default_rng(seed).permutation(len(instances))
    n_train = min(len(instances) - 1, max(1, round(train_fraction * len(instances))))
    train_set = [instances[i] for i in sorted(order[:n_train])]
    test_set = [instances[i] for i in sorted(order[n_train:])]
    return train_set, test_set


def cmd_pipeline(args):
    s = _settings(args, PIPELINE_DEFAULTS)
    out = Path(s.out)
    datasets_dir, models_dir = out / "datasets", out / "models"
    runs_dir, eval_dir = out / "runs", out / "eval"
    for d in (datasets_dir, models_dir, runs_dir, eval_dir):
        d.mkdir(parents=True, exist_ok=True)

    instances = _resolve_instances(args.instances,
                                   materialize_dir=out / "instances")
    train_set, test_set = _split_instances(instances, s.train_fraction, s.seed)
    log.info("pipeline: %d train / %d test instances",
             len(train_set), len(test_set))

    # training data for both heads
    gen = argparse.Namespace(
        backend=s.backend, random_prob=s.random_prob, repeats=s.repeats,
        node_limit=s.gen_node_limit, seed=s.seed, jobs=s.jobs,
        skip_random_nodes=False, n_bits=s.n_bits)
    branching_examples = _branching_examples(train_set, gen)
    if not branching_examples:
        raise DataError("no branching examples collected; the training "
                        "instances all solve at the root")
    branching_data = datasets_dir / "branching.jsonl"
    save_dataset(branching_examples, branching_data)
    diving_examples = _diving_examples(train_set, gen)
    if not diving_examples:
        raise DataError("no diving examples collected; no feasible "
                        "assignments were found on the training instances")
    diving_data = datasets_dir / "diving.jsonl"
    save_dataset(diving_examples, diving_data)

    # one branching model, one diving model per coverage
    model_config = GcnConfig(hidden=s.hidden, layers=s.layers)
    base = TrainConfig(lr=s.lr, batch_size=s.batch_size, steps=s.steps,
                       seed=s.seed, penalty_weight=s.penalty_weight)
    branching_model = train(init_model(model_config, seed=s.seed),
                            branching_examples, base)
    branching_model_path = models_dir / "branching.npz"
    save_model(branching_model, branching_model_path)
    coverages = _parse_float_list(s.coverages) or [0.25, 0.5]
    suite = train_coverage_suite(diving_examples, coverages, base_config=base,
                                 seed=s.seed + 1, model_config=model_config)
    diving_model_paths = {}
    for cov, model in suite.items():
        name = f"diving-c{100 * cov:g}.npz"
        save_model(model, models_dir / name)
        diving_model_paths[repr(float(cov))] = name

    # evaluation runs: plain solver, learned branching, neural diving
    limits = SolverLimits(max_time=s.time_limit, max_nodes=s.node_limit,
                          target_gap=s.target_gap)
    dive_limits = SolverLimits(max_time=s.budget, max_nodes=s.node_limit,
                               target_gap=s.target_gap)
    diving_models = [suite[cov] for cov in coverages]
    seeds = EVALUATION_SEEDS[:max(1, int(s.n_seeds))]

    def run_one(task):
        instance, seed, label = task
        stem = f"{_safe(instance.name)}.{_safe(label)}.seed{seed}"
        if label == "baseline":
            result = solve(instance, limits=limits, seed=seed)
            policy_name = "most_fractional"
        elif label == "learned-branching":
            result = solve(instance,
                           policy=LearnedBranchingPolicy(branching_model),
                           limits=limits, seed=seed)
            policy_name = "learned"
        else:
            config = DivingConfig(samples_per_model=s.samples,
                                  n_sub_seeds=s.sub_seeds,
                                  max_submips=s.max_submips,
                                  n_bits=s.n_bits, seed=seed)
            specs = generate_submips(diving_models, instance, config)
            result = dive_sequential(instance, specs, limits=dive_limits,
                                     seed=seed)
            policy_name = "dive-seq"
        return _write_run(runs_dir, stem, instance, result, label,
                          policy_name, seed)

    tasks = [(instance, seed, label)
             for instance in test_set
             for seed in seeds
             for label in ("baseline", "learned-branching", "neural-diving")]
    run_files = _parallel_map(run_one, tasks, s.jobs)

    # best-known objectives: the best bound any run proved or found
    best = {}
    for path in run_files:
        doc = _read_run(path)
        p = _dec(doc["primal_bound"])
        if math.isfinite(p):
            name = doc["instance"]
            best[name] = min(best.get(name, math.inf), p)
    best_path = _dump_json({k: _enc(v) for k, v in sorted(best.items())},
                           eval_dir / "best_known.json")

    eval_target = s.target_gap if s.target_gap is not None else 0.0
    eval_manifest = _evaluate_runs(
        runs_dir, eval_dir, best_known=best, kind=s.kind,
        target_gap=eval_target, time_limit=s.par_time_limit, k=int(s.k))

    manifest = {
        "format": "neuromip-pipeline",
        "version": 1,
        "seed": int(s.seed),
        "instances": [inst.name for inst in instances],
        "train_instances": [inst.name for inst in train_set],
        "test_instances": [inst.name for inst in test_set],
        "datasets": {"branching": str(branching_data.relative_to(out)),
                     "diving": str(diving_data.relative_to(out))},
        "models": {"branching": str(branching_model_path.relative_to(out)),
                   "diving": {cov: f"models/{name}"
                              for cov, name in diving_model_paths.items()}},
        "runs": [str(Path(p).relative_to(out)) for p in run_files],
        "best_known": str(best_path.relative_to(out)),
        "eval": str(Path(eval_manifest).relative_to(out)),
    }
    return _dump_json(manifest, out / "pipeline.json")


# -- parser wiring ----------------------------------------------------------------


def _add_common(sub):
    sub.add_argument("--config", help="JSON file with option defaults")


def build_parser():
    parser = _Parser(prog="neuromip",
                     description="Mixed-integer programming toolkit with "
                                 "learned diving and branching")
    commands = parser.add_subparsers(dest="command", metavar="command")

    p = commands.add_parser("convert", help="rewrite an instance as canonical JSON")
    p.add_argument("instance")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_convert)

    p = commands.add_parser("validate", help="structural checks on an instance")
    p.add_argument("instance")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_validate)

    p = commands.add_parser("solve", help="branch and bound on one instance")
    p.add_argument("instance")
    p.add_argument("--policy")
    p.add_argument("--seed", type=int)
    p.add_argument("--time-limit", type=float)
    p.add_argument("--node-limit", type=int)
    p.add_argument("--target-gap", type=float)
    p.add_argument("--label")
    p.add_argument("--calibrated", action="store_const", const=True,
                   help="measure time with the calibrated clock")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_solve)

    p = commands.add_parser("lp-bench", help="batched-vs-sequential LP timing")
    p.add_argument("instance")
    p.add_argument("--variants", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_lp_bench)

    p = commands.add_parser("gen-data", help="collect training examples")
    p.add_argument("--kind", choices=("branching", "diving"))
    p.add_argument("--instances",
                   help="directory, file, or family spec like set_cover:8:seed=3")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--backend", choices=("exact", "admm"))
    p.add_argument("--random-prob", type=float)
    p.add_argument("--repeats", type=int)
    p.add_argument("--node-limit", type=int)
    p.add_argument("--skip-random-nodes", action="store_const", const=True)
    p.add_argument("--n-bits", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = commands.add_parser("train", help="fit a model to a dataset")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--coverage", type=float)
    p.add_argument("--coverages",
                   help="comma-separated list; trains one model per value")
    p.add_argument("--penalty-weight", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--loss-csv")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = commands.add_parser("dive", help="solve through generated sub-MIPs")
    p.add_argument("instance")
    p.add_argument("--models", help="model directory or comma-separated files")
    p.add_argument("--mode", choices=("seq", "par"))
    p.add_argument("--budget", type=float, help="total time budget in seconds")
    p.add_argument("--time-limit", type=float)
    p.add_argument("--node-limit", type=int)
    p.add_argument("--target-gap", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--sub-seeds", type=int)
    p.add_argument("--max-submips", type=int)
    p.add_argument("--n-bits", type=int)
    p.add_argument("--bernoulli", action="store_const", const=True)
    p.add_argument("--label")
    p.add_argument("--jobs", type=int)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_dive)

    p = commands.add_parser("cut-select", help="pick the k best cuts from a pool")
    p.add_argument("instance")
    p.add_argument("--pool", help="JSON file with 'rows' and 'rhs'")
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--node-limit", type=int)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_cut_select)

    p = commands.add_parser("eval", help="gap curves, survival, PAR tables")
    p.add_argument("runs_pos", nargs="?", metavar="runs",
                   help="directory of run records")
    p.add_argument("--runs")
    p.add_argument("--best-known", help="JSON file of instance objectives")
    p.add_argument("--target-gap", type=float)
    p.add_argument("--kind", choices=("primal", "dual", "primal_dual"))
    p.add_argument("--time-limit", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = commands.add_parser("pipeline",
                            help="gen-data, train, solve and dive, then eval")
    p.add_argument("instances",
                   help="directory, file, or family spec like set_cover:8:seed=3")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--backend", choices=("exact", "admm"))
    p.add_argument("--random-prob", type=float)
    p.add_argument("--repeats", type=int)
    p.add_argument("--gen-node-limit", type=int)
    p.add_argument("--n-bits", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--coverages")
    p.add_argument("--penalty-weight", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--sub-seeds", type=int)
    p.add_argument("--max-submips", type=int)
    p.add_argument("--n-seeds", type=int,
                   help="how many of the evaluation seeds to run")
    p.add_argument("--time-limit", type=float)
    p.add_argument("--node-limit", type=int)
    p.add_argument("--budget", type=float)
    p.add_argument("--target-gap", type=float)
    p.add_argument("--kind", choices=("primal", "dual", "primal_dual"))
    p.add_argument("--par-time-limit", type=float)
    p.add_argument("--k", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    if getattr(args, "func", None) is None:
        parser.print_help()
        return EXIT_USAGE
    try:
        path = args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:
        import traceback
        traceback.print_exc()
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    if path is not None:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

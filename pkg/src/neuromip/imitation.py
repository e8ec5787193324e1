"""Expert-data generation and imitation metrics.

Branching data comes from running the tree search with the strong-branching
expert in the driver's seat: every visited node contributes one training
example whose label is the full expert score distribution.  Occasional random
moves (and an optional round of letting a trained policy drive while the
expert only labels) diversify the visited-state distribution.  Diving labels
are the feasible assignments a plain solve finds, weighted by solution
quality.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .bnb import SolverLimits, expert_distribution, fsb_scores, node_instance, solve
from .diving import bit_targets
from .gnn import (
    BranchingExample,
    DivingExample,
    LearnedBranchingPolicy,
    branching_distribution,
    importance_weights,
)
from .graph import BipartiteGraph, encode

log = logging.getLogger(__name__)

DATASET_FORMAT = "neuromip-dataset"
DATASET_VERSION = 1


class _RecordingExpertPolicy:
    """Drives the search with the expert, logging a label at every node.

    With probability ``random_prob`` the executed action is a uniform random
    candidate instead of the expert argmax; the label stays the expert
    distribution either way (the example is merely marked, or skipped
    entirely under ``skip_random_nodes``).
    """

    def __init__(self, dataset, backend="exact", random_prob=0.0,
                 skip_random_nodes=False, instance_name=""):
        self.dataset = dataset
        self.backend = backend
        self.random_prob = random_prob
        self.skip_random_nodes = skip_random_nodes
        self.instance_name = instance_name

    def reset(self, instance, rng):
        pass

    def select(self, ctx):
        scores = fsb_scores(ctx.problem, ctx.x, ctx.objective, ctx.candidates,
                            backend=self.backend, row_duals=ctx.row_duals)
        target = expert_distribution(scores.scores)
        pick = int(np.argmax(target))
        random_move = ctx.rng.random() < self.random_prob
        if random_move:
            pick = int(ctx.rng.integers(ctx.candidates.size))
        if not (random_move and self.skip_random_nodes):
            node = node_instance(ctx.instance, ctx.node.lower, ctx.node.upper)
            self.dataset.append(BranchingExample(
                graph=encode(node, lp_solution=ctx.x),
                candidates=ctx.candidates.copy(),
                target=target,
                instance_name=self.instance_name,
                executed_random=random_move,
            ))
        return int(ctx.candidates[pick])


def generate_branching_data(instances, backend="exact", random_prob=0.1,
                            repeats=5, node_limit=None, seed=0,
                            skip_random_nodes=False):
    """Expert trajectories over a set of instances, several seeds each.

    Returns a list of BranchingExample.  Every visited branching node is
    labeled with the expert distribution; executed actions follow the expert
    except for the ``random_prob`` exploration moves.
    """
    dataset = []
    limits = SolverLimits(max_nodes=node_limit)
    for idx, instance in enumerate(instances):
        for rep in range(repeats):
            policy = _RecordingExpertPolicy(
                dataset, backend=backend, random_prob=random_prob,
                skip_random_nodes=skip_random_nodes,
                instance_name=instance.name)
            solve(instance, policy=policy, limits=limits,
                  seed=seed + 1000 * idx + rep)
    return dataset


def dagger_round(policy_model, instances, backend="exact", node_limit=None,
                 seed=0):
    """One aggregation round: the trained policy drives, the expert labels.

    The policy's own decisions shape the visited-node distribution; each
    node still gets the expert distribution as its training label.
    ``policy_model`` may be a trained model or any branching policy object.
    """
    from .gnn import GcnModel

    dataset = []
    limits = SolverLimits(max_nodes=node_limit)
    driver = (LearnedBranchingPolicy(policy_model)
              if isinstance(policy_model, GcnModel) else policy_model)

    for idx, instance in enumerate(instances):
        name = instance.name

        def label_node(ctx, _name=name):
            scores = fsb_scores(ctx.problem, ctx.x, ctx.objective,
                                ctx.candidates, backend=backend,
                                row_duals=ctx.row_duals)
            node = node_instance(ctx.instance, ctx.node.lower, ctx.node.upper)
            dataset.append(BranchingExample(
                graph=encode(node, lp_solution=ctx.x),
                candidates=ctx.candidates.copy(),
                target=expert_distribution(scores.scores),
                instance_name=_name,
            ))

        solve(instance, policy=driver, limits=limits, seed=seed + idx,
              node_callback=label_node)
    return dataset


@dataclass
class DivingLabels:
    """All distinct feasible assignments one solve found, quality-weighted."""

    instance_name: str
    assignments: np.ndarray         # (k, n)
    objectives: np.ndarray          # (k,)
    weights: np.ndarray             # (k,), sums to 1


def collect_diving_labels(instances, limits=None, seed=0):
    """Feasible assignments per instance from plain solves, deduplicated.

    Instances where the solve finds nothing feasible are dropped with a
    warning.  Weights are the quality softmax, so each instance's weights sum
    to 1.
    """
    out = []
    for idx, instance in enumerate(instances):
        found = []

        def record(x, objective, _elapsed, _found=found):
            _found.append((np.asarray(x, dtype=float).copy(), float(objective)))

        solve(instance, limits=limits, seed=seed + idx, on_incumbent=record)
        seen = set()
        xs, objs = [], []
        for x, obj in found:
            key = tuple(np.round(x, 9))
            if key in seen:
                continue
            seen.add(key)
            xs.append(x)
            objs.append(obj)
        if not xs:
            log.warning("no feasible assignment found for %s; dropped",
                        instance.name)
            continue
        out.append(DivingLabels(
            instance_name=instance.name,
            assignments=np.array(xs),
            objectives=np.array(objs),
            weights=importance_weights(objs),
        ))
    return out


def build_diving_dataset(instances, labels, n_bits=8):
    """Pair collected labels with encoded graphs: one example per assignment.

    Binary variables supply direct 0/1 targets; general integers contribute
    bit-walk targets.  ``instances`` maps name -> instance for the labels.
    """
    from .lp import CONVERGED, solve_lp_exact

    by_name = {inst.name: inst for inst in instances}
    examples = []
    for label in labels:
        instance = by_name[label.instance_name]
        sol = solve_lp_exact(instance)
        graph = encode(instance,
                       lp_solution=sol.x if sol.status == CONVERGED else None)
        ints = instance.integer_indices
        binary_mask = np.array([
            instance.l[i] == 0.0 and instance.u[i] == 1.0 for i in ints])
        binary_vars = ints[binary_mask]
        general_vars = [int(i) for i in ints[~binary_mask]
                        if np.isfinite(instance.l[i])
                        and np.isfinite(instance.u[i])]
        for x, weight in zip(label.assignments, label.weights):
            bit_idx, bit_pos, bit_val = [], [], []
            for i in general_vars:
                positions, bits, _ = bit_targets(instance.l[i], instance.u[i],
                                                 x[i], n_bits)
                bit_idx.extend([i] * len(positions))
                bit_pos.extend(positions.tolist())
                bit_val.extend(bits.tolist())
            examples.append(DivingExample(
                graph=graph,
                indices=binary_vars.copy(),
                values=np.round(x[binary_vars]),
                weight=float(weight),
                bit_indices=np.array(bit_idx, dtype=int),
                bit_positions=np.array(bit_pos, dtype=int),
                bit_values=np.array(bit_val),
                instance_name=label.instance_name,
            ))
    return examples


def topk_accuracy(model, dataset, ks=(1, 10)):
    """Fraction of nodes where the expert argmax is in the model's top k.

    Expert argmax ties break to the lowest candidate index; model ranking
    ties likewise.  k larger than the candidate count is clamped (a hit
    whenever the expert argmax is among the candidates at all, which it is).
    ``model`` may also be any callable (graph, candidates) -> probabilities.
    """
    if not dataset:
        raise ValueError("empty dataset")
    predict = (model if callable(model) and not hasattr(model, "params")
               else lambda g, c: branching_distribution(model, g, c))
    hits = {k: 0 for k in ks}
    for ex in dataset:
        p = predict(ex.graph, ex.candidates)
        expert_pos = int(np.argmax(ex.target))
        ranking = np.argsort(-p, kind="stable")
        for k in ks:
            kk = min(int(k), len(ex.candidates))
            if expert_pos in ranking[:kk]:
                hits[k] += 1
    return {k: hits[k] / len(dataset) for k in ks}


# -- dataset files --------------------------------------------------------------


def _graph_to_dict(graph):
    adj = graph.adjacency.tocoo()
    return {
        "n_var": int(graph.n_var),
        "n_cons": int(graph.n_cons),
        "features": [[float(v) for v in row] for row in graph.features],
        "adjacency": {
            "row": [int(i) for i in adj.row],
            "col": [int(j) for j in adj.col],
            "data": [float(v) for v in adj.data],
        },
        "schema_version": graph.schema_version,
        "has_lp_features": bool(graph.has_lp_features),
    }


def _graph_from_dict(doc):
    n = doc["n_var"] + doc["n_cons"]
    adj = doc["adjacency"]
    adjacency = sp.coo_matrix(
        (adj["data"], (adj["row"], adj["col"])), shape=(n, n)).tocsr()
    return BipartiteGraph(
        n_var=doc["n_var"],
        n_cons=doc["n_cons"],
        features=np.array(doc["features"], dtype=float),
        adjacency=adjacency,
        schema_version=doc["schema_version"],
        has_lp_features=doc["has_lp_features"],
    )


def _example_to_record(ex):
    if isinstance(ex, BranchingExample):
        return {
            "kind": "branching",
            "instance": ex.instance_name,
            "candidates": [int(i) for i in ex.candidates],
            "target": [float(v) for v in ex.target],
            "executed_random": bool(ex.executed_random),
            "graph": _graph_to_dict(ex.graph),
        }
    if isinstance(ex, DivingExample):
        return {
            "kind": "diving",
            "instance": ex.instance_name,
            "indices": [int(i) for i in ex.indices],
            "values": [float(v) for v in ex.values],
            "weight": float(ex.weight),
            "bit_indices": [int(i) for i in (ex.bit_indices if ex.bit_indices
                                             is not None else [])],
            "bit_positions": [int(i) for i in (ex.bit_positions
                                               if ex.bit_positions is not None
                                               else [])],
            "bit_values": [float(v) for v in (ex.bit_values if ex.bit_values
                                              is not None else [])],
            "graph": _graph_to_dict(ex.graph),
        }
    raise TypeError(f"not a training example: {type(ex)!r}")


def _example_from_record(doc):
    graph = _graph_from_dict(doc["graph"])
    if doc["kind"] == "branching":
        return BranchingExample(
            graph=graph,
            candidates=np.array(doc["candidates"], dtype=int),
            target=np.array(doc["target"], dtype=float),
            instance_name=doc["instance"],
            executed_random=doc["executed_random"],
        )
    if doc["kind"] == "diving":
        return DivingExample(
            graph=graph,
            indices=np.array(doc["indices"], dtype=int),
            values=np.array(doc["values"], dtype=float),
            weight=doc["weight"],
            bit_indices=np.array(doc["bit_indices"], dtype=int),
            bit_positions=np.array(doc["bit_positions"], dtype=int),
            bit_values=np.array(doc["bit_values"], dtype=float),
            instance_name=doc["instance"],
        )
    raise ValueError(f"unknown example kind {doc['kind']!r}")


def save_dataset(examples, path):
    """One JSON record per line, plus a summary index next to it."""
    path = str(path)
    kinds = {}
    names = set()
    with open(path, "w") as fh:
        for ex in examples:
            record = _example_to_record(ex)
            kinds[record["kind"]] = kinds.get(record["kind"], 0) + 1
            names.add(record["instance"])
            fh.write(json.dumps(record) + "\n")
    index = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "count": len(examples),
        "kind_counts": kinds,
        "instances": sorted(names),
    }
    with open(path + ".index.json", "w") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_dataset(path):
    examples = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                examples.append(_example_from_record(json.loads(line)))
    return examples

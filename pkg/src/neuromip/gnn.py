"""Graph network over the bipartite encoding: model, heads, losses, training.

The network stacks L rounds of ``Z <- LayerNorm(A @ mlp(Z_running))`` where A
is the graph adjacency and ``Z_running`` concatenates every previous round's
output with the raw features (skip connections by concatenation).  All heads
are small MLPs applied per node with shared weights, so the same model serves
graphs of any size.

Heads and their uses:
  * diving head: per-variable logit t_d, success probability sigmoid(t_d)
    for the factorized Bernoulli assignment model;
  * selective head: per-variable logit whose sigmoid is the probability that
    this variable should be assigned at all (coverage-controlled);
  * bit head: shares the diving role for general integers, predicting one
    binary-expansion bit at a time with the bit position as an extra input;
  * branching head: per-candidate logit t_c, distribution exp(-t_c)/sum.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor, parameter
from .graph import FEATURE_SCHEMA_VERSION, N_FEATURES, BipartiteGraph, encode

MODEL_FORMAT = "neuromip-gcn"
MODEL_VERSION = 1


@dataclass
class GcnConfig:
    n_features: int = N_FEATURES
    hidden: int = 64
    layers: int = 4
    use_layer_norm: bool = True
    n_bits: int = 8                 # bit positions the bit head can address
    schema_version: str = FEATURE_SCHEMA_VERSION

    @property
    def embedding_width(self):
        return self.n_features + self.layers * self.hidden


def schema_hash(config):
    """Stable digest tying a checkpoint to its feature schema and shape."""
    doc = json.dumps({
        "schema_version": config.schema_version,
        "n_features": config.n_features,
        "hidden": config.hidden,
        "layers": config.layers,
        "use_layer_norm": config.use_layer_norm,
        "n_bits": config.n_bits,
    }, sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


@dataclass
class GcnModel:
    config: GcnConfig
    params: dict = field(default_factory=dict)


def _mlp_params(rng, name, width_in, width_hidden, width_out):
    scale1 = 1.0 / np.sqrt(width_in)
    scale2 = 1.0 / np.sqrt(width_hidden)
    return {
        f"{name}.W1": parameter(rng.normal(size=(width_in, width_hidden)) * scale1,
                                name=f"{name}.W1"),
        f"{name}.b1": parameter(np.zeros(width_hidden), name=f"{name}.b1"),
        f"{name}.W2": parameter(rng.normal(size=(width_hidden, width_out)) * scale2,
                                name=f"{name}.W2"),
        f"{name}.b2": parameter(np.zeros(width_out), name=f"{name}.b2"),
    }


def init_model(config=None, seed=0):
    """A fresh model with seed-deterministic initialization."""
    config = config or GcnConfig()
    rng = np.random.default_rng(seed)
    params = {}
    width = config.n_features
    for layer in range(config.layers):
        params.update(_mlp_params(rng, f"layer{layer}", width, config.hidden,
                                  config.hidden))
        params[f"layer{layer}.ln_gain"] = parameter(np.ones(config.hidden),
                                                    name=f"layer{layer}.ln_gain")
        params[f"layer{layer}.ln_bias"] = parameter(np.zeros(config.hidden),
                                                    name=f"layer{layer}.ln_bias")
        width += config.hidden
    for head in ("diving", "selective", "branching"):
        params.update(_mlp_params(rng, f"head.{head}", width, config.hidden, 1))
    params.update(_mlp_params(rng, "head.bit", width + 1, config.hidden, 1))
    return GcnModel(config=config, params=params)


def _mlp(params, name, x):
    h = ad.relu(x @ params[f"{name}.W1"] + params[f"{name}.b1"])
    return h @ params[f"{name}.W2"] + params[f"{name}.b2"]


def forward(model, graph):
    """Embeddings for every node: the concatenation of all L round outputs.

    Returns a tape tensor of shape (n_nodes, embedding_width); heads index
    into it.  Round outputs pass through the adjacency (order-canonical
    sparse multiply) and, when enabled, layer normalization.
    """
    if graph.features.shape[1] != model.config.n_features:
        raise ValueError(
            f"graph has {graph.features.shape[1]} features per node, "
            f"model expects {model.config.n_features}")
    if graph.schema_version != model.config.schema_version:
        raise ValueError(
            f"graph schema {graph.schema_version!r} does not match "
            f"model schema {model.config.schema_version!r}")
    running = Tensor(graph.features)
    p = model.params
    for layer in range(model.config.layers):
        mixed = ad.sparse_matmul(graph.adjacency, _mlp(p, f"layer{layer}", running))
        if model.config.use_layer_norm:
            mixed = ad.layer_norm(mixed, p[f"layer{layer}.ln_gain"],
                                  p[f"layer{layer}.ln_bias"])
        running = ad.concat_columns([mixed, running])
    return running


def _head_logits(model, embeddings, head, node_indices):
    rows = ad.gather_rows(embeddings, np.asarray(node_indices, dtype=int))
    return _mlp(model.params, f"head.{head}", rows).flatten()


def diving_logits(model, embeddings, var_indices):
    return _head_logits(model, embeddings, "diving", var_indices)


def selective_logits(model, embeddings, var_indices):
    return _head_logits(model, embeddings, "selective", var_indices)


def branching_logits(model, embeddings, candidates):
    return _head_logits(model, embeddings, "branching", candidates)


def bit_logits(model, embeddings, var_indices, bit_positions):
    """Logits for binary-expansion bits; the position is an extra head input."""
    rows = ad.gather_rows(embeddings, np.asarray(var_indices, dtype=int))
    pos = Tensor(np.asarray(bit_positions, dtype=float).reshape(-1, 1))
    return _mlp(model.params, "head.bit",
                ad.concat_columns([rows, pos])).flatten()


def diving_probabilities(model, graph, var_indices):
    """Success probabilities mu_d = sigmoid(t_d), as plain numbers."""
    emb = forward(model, graph)
    return ad.sigmoid(diving_logits(model, emb, var_indices)).value


def selection_probabilities(model, graph, var_indices):
    emb = forward(model, graph)
    return ad.sigmoid(selective_logits(model, emb, var_indices)).value


def bit_probabilities(model, graph, var_indices, bit_positions):
    emb = forward(model, graph)
    return ad.sigmoid(bit_logits(model, emb, var_indices, bit_positions)).value


def candidate_distribution(logits):
    """p_c = exp(-t_c) / sum_c' exp(-t_c'): lower logit, higher probability."""
    t = logits if isinstance(logits, Tensor) else Tensor(np.asarray(logits, dtype=float))
    return np.exp(ad.log_softmax(-t).value)


def branching_distribution(model, graph, candidates):
    """The model's distribution over branching candidates, as plain numbers."""
    emb = forward(model, graph)
    return candidate_distribution(branching_logits(model, emb, candidates))


# -- training examples and losses --------------------------------------------


@dataclass
class DivingExample:
    """One (graph, partial assignment) pair with its importance weight.

    ``indices`` are variable node indices; ``values`` their 0/1 targets.  For
    general integers, bit targets ride along as parallel arrays of node
    index, bit position, and bit value.
    """

    graph: BipartiteGraph
    indices: np.ndarray
    values: np.ndarray
    weight: float = 1.0
    bit_indices: np.ndarray | None = None
    bit_positions: np.ndarray | None = None
    bit_values: np.ndarray | None = None
    instance_name: str = ""


@dataclass
class BranchingExample:
    graph: BipartiteGraph
    candidates: np.ndarray
    target: np.ndarray              # expert distribution over candidates
    instance_name: str = ""
    executed_random: bool = False   # the trajectory took a random move here


def importance_weights(objectives):
    """Softmax of negated objectives: better solutions weigh more.

    Computed with a log-sum-exp shift so widely spread objectives do not
    overflow.  Callers deduplicate solutions first, otherwise a repeated
    solution is double-counted.
    """
    obj = np.asarray(objectives, dtype=float)
    if obj.size == 0:
        raise ValueError("no assignments to weight")
    neg = -obj
    shift = neg - neg.max()
    log_z = np.log(np.sum(np.exp(shift)))
    return np.exp(shift - log_z)


def _bernoulli_nll_vector(logits, values):
    """Per-entry -log Bern(value; sigmoid(logit)), stable at extreme logits."""
    y = Tensor(np.asarray(values, dtype=float))
    return -(y * ad.log_sigmoid(logits) + (1.0 - y) * ad.log_sigmoid(-logits))


def loss_diving(model, examples):
    """Importance-weighted assignment NLL, averaged over the batch.

    The assignment model factorizes per variable, so the log-likelihood is a
    sum of Bernoulli terms (plus bit terms for general integers).
    """
    if not examples:
        raise ValueError("empty batch")
    total = None
    for ex in examples:
        emb = forward(model, ex.graph)
        nll = _bernoulli_nll_vector(
            diving_logits(model, emb, ex.indices), ex.values).sum()
        if ex.bit_indices is not None and len(ex.bit_indices):
            nll = nll + _bernoulli_nll_vector(
                bit_logits(model, emb, ex.bit_indices, ex.bit_positions),
                ex.bit_values).sum()
        term = float(ex.weight) * nll
        total = term if total is None else total + term
    return total * (1.0 / len(examples))


def _maximum(x, floor):
    # max(x, floor) written with pieces the tape differentiates
    return ad.relu(x - floor) + floor


def loss_selective(model, examples, coverage, penalty_weight):
    """Coverage-controlled assignment loss.

    Per example: selection probabilities g_d mask the per-variable NLL,
    normalized by their sum (floored at 1e-6), plus
    penalty_weight * max(coverage - mean(g), 0)^2 pulling the assigned
    fraction up to the target.  The relaxed g is used during training;
    inference samples or thresholds it.
    """
    if not examples:
        raise ValueError("empty batch")
    total = None
    for ex in examples:
        emb = forward(model, ex.graph)
        nll = _bernoulli_nll_vector(
            diving_logits(model, emb, ex.indices), ex.values)
        g = ad.sigmoid(selective_logits(model, emb, ex.indices))
        masked = (g * nll).sum() / _maximum(g.sum(), 1e-6)
        gap = ad.relu(coverage - g.mean())
        term = float(ex.weight) * masked + penalty_weight * gap * gap
        total = term if total is None else total + term
    return total * (1.0 / len(examples))


def loss_branching(model, examples):
    """Cross-entropy against the expert branching distribution, batch mean."""
    if not examples:
        raise ValueError("empty batch")
    total = None
    for ex in examples:
        emb = forward(model, ex.graph)
        logp = ad.log_softmax(-branching_logits(model, emb, ex.candidates))
        ce = -(Tensor(np.asarray(ex.target, dtype=float)) * logp).sum()
        total = ce if total is None else total + ce
    return total * (1.0 / len(examples))


# -- training loop ------------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    steps: int = 200
    seed: int = 0
    coverage: float | None = None   # set -> selective loss for diving data
    penalty_weight: float = 32.0
    loss_csv: str | None = None


def _batch_loss(model, batch, config):
    kinds = {type(ex) for ex in batch}
    if kinds == {BranchingExample}:
        return loss_branching(model, batch)
    if kinds == {DivingExample}:
        if config.coverage is not None:
            return loss_selective(model, batch, config.coverage,
                                  config.penalty_weight)
        return loss_diving(model, batch)
    raise ValueError(f"mixed or unknown example kinds in batch: {kinds}")


def train(model, examples, config=None):
    """Adam over uniformly sampled batches; deterministic given the seed.

    Mutates and returns ``model``.  With ``loss_csv`` set, writes one
    ``step,loss`` row per optimization step.
    """
    config = config or TrainConfig()
    if not examples:
        raise ValueError("empty dataset")
    kinds = {type(ex) for ex in examples}
    if len(kinds) > 1:
        raise ValueError(f"mixed example kinds in dataset: {kinds}")
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.params, lr=config.lr)
    rows = []
    for step in range(config.steps):
        picks = rng.integers(0, len(examples), size=config.batch_size)
        batch = [examples[int(i)] for i in picks]
        opt.zero_grad()
        loss = _batch_loss(model, batch, config)
        loss.backward()
        opt.step()
        rows.append((step, float(loss.value)))
    if config.loss_csv is not None:
        with open(config.loss_csv, "w") as fh:
            fh.write("step,loss\n")
            for step, value in rows:
                fh.write(f"{step},{value!r}\n")
    return model


def train_coverage_suite(examples, coverages, base_config=None, seed=0,
                         model_config=None):
    """One selective diving model per coverage threshold, shared data."""
    out = {}
    for i, cov in enumerate(coverages):
        config = base_config or TrainConfig()
        config = TrainConfig(lr=config.lr, batch_size=config.batch_size,
                             steps=config.steps, seed=seed + i, coverage=cov,
                             penalty_weight=config.penalty_weight)
        model = init_model(model_config, seed=seed + i)
        out[cov] = train(model, examples, config)
    return out


# -- checkpoints ---------------------------------------------------------------


def save_model(model, path):
    """Versioned parameter dump; refuses to reload under a changed schema."""
    header = json.dumps({
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "schema_hash": schema_hash(model.config),
        "config": {
            "n_features": model.config.n_features,
            "hidden": model.config.hidden,
            "layers": model.config.layers,
            "use_layer_norm": model.config.use_layer_norm,
            "n_bits": model.config.n_bits,
            "schema_version": model.config.schema_version,
        },
    })
    arrays = {key: t.value for key, t in model.params.items()}
    np.savez(path, __header__=np.frombuffer(header.encode(), dtype=np.uint8),
             **arrays)


def load_model(path):
    with np.load(path) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        if header.get("format") != MODEL_FORMAT:
            raise ValueError(f"not a model checkpoint: {header.get('format')!r}")
        if header.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported checkpoint version "
                             f"{header.get('version')!r}")
        config = GcnConfig(**header["config"])
        if header.get("schema_hash") != schema_hash(config):
            raise ValueError("checkpoint schema hash does not match its config")
        params = {key: parameter(data[key], name=key)
                  for key in data.files if key != "__header__"}
    return GcnModel(config=config, params=params)


# -- plugging the model into the tree search -----------------------------------


class LearnedBranchingPolicy:
    """Branching policy that follows the model's candidate distribution."""

    def __init__(self, model, greedy=True):
        self.model = model
        self.greedy = greedy

    def reset(self, instance, rng):
        pass

    def select(self, ctx):
        from .bnb import node_instance
        node = node_instance(ctx.instance, ctx.node.lower, ctx.node.upper)
        graph = encode(node, lp_solution=ctx.x)
        p = branching_distribution(self.model, graph, ctx.candidates)
        if self.greedy:
            return int(ctx.candidates[int(np.argmax(p))])
        return int(ctx.candidates[int(ctx.rng.choice(p.size, p=p / p.sum()))])

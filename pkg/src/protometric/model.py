"""Prototypical classifier: embedding models, losses, baselines, training.

The embedding network and the class prototypes are trained jointly: the
data term pulls each sample embedding towards its class prototype and away
from the others, while an optional regularizer arranges the prototypes so
their pairwise distances track the misclassification costs. Gradients are
analytic throughout (reverse-mode by hand); `finite_difference_check`
provides the matching numerical oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .distortion import PrototypeSet, disto_loss, rank_loss, sample_triplets
from .geometry import DistanceSpec, dist_from_sqnorm, grad_weight_from_sqnorm, pairwise_sqnorms
from .optim import OptimizerSpec, make_optimizer
from .taxonomy import FiniteMetric, Taxonomy, cost_matrix

ARCHITECTURES = ("identity", "linear", "mlp")
ACTIVATIONS = ("relu", "tanh")
REGULARIZERS = ("disto", "disto-fixed-scale", "rank", "none")
HEADS = ("prototypes", "cross-entropy", "soft-labels")
SCHEDULES = ("joint", "fixed-proto")

CHECKPOINT_VERSION = 1


class TrainingDivergedError(FloatingPointError):
    """Loss or parameters became non-finite during training."""


# ---------------------------------------------------------------------------
# Embedding model
# ---------------------------------------------------------------------------

@dataclass
class EmbeddingModel:
    """Parameterized map from raw features to the embedding space.

    Parameters live in one flat float64 vector; layers are views into it.
    `identity` requires input_dim == output_dim and has no parameters.
    """

    kind: str
    input_dim: int
    output_dim: int
    hidden: tuple[int, ...] = ()
    activation: str = "relu"
    params: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def layer_dims(self) -> list[tuple[int, int]]:
        if self.kind == "identity":
            return []
        if self.kind == "linear":
            return [(self.input_dim, self.output_dim)]
        dims = [self.input_dim, *self.hidden, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    def param_count(self) -> int:
        return sum(din * dout + dout for din, dout in self.layer_dims())

    def to_dict(self) -> dict:
        return {"kind": self.kind, "input_dim": self.input_dim,
                "output_dim": self.output_dim, "hidden": list(self.hidden),
                "activation": self.activation,
                "params": [float(p) for p in self.params]}

    @staticmethod
    def from_dict(d: dict) -> "EmbeddingModel":
        model = EmbeddingModel(kind=d["kind"], input_dim=int(d["input_dim"]),
                               output_dim=int(d["output_dim"]),
                               hidden=tuple(int(h) for h in d.get("hidden", [])),
                               activation=d.get("activation", "relu"),
                               params=np.asarray(d["params"], dtype=np.float64))
        _validate_model(model)
        return model


def _validate_model(model: EmbeddingModel) -> None:
    if model.kind not in ARCHITECTURES:
        raise ValueError(f"unknown architecture '{model.kind}'")
    if model.activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation '{model.activation}'")
    if model.kind == "identity" and model.input_dim != model.output_dim:
        raise ValueError("identity architecture requires input_dim == output_dim")
    if model.params.shape != (model.param_count(),):
        raise ValueError(
            f"parameter vector has size {model.params.size}, architecture "
            f"needs {model.param_count()}"
        )
    if not np.all(np.isfinite(model.params)):
        raise ValueError("model parameters must be finite")


def init_embedding_model(kind: str, input_dim: int, output_dim: int,
                         hidden: tuple[int, ...] = (), activation: str = "relu",
                         rng: np.random.Generator | None = None) -> EmbeddingModel:
    """Fresh model with N(0, 1/fan_in) weights and zero biases."""
    model = EmbeddingModel(kind, input_dim, output_dim, tuple(hidden), activation)
    if model.kind == "identity":
        model.params = np.zeros(0)
        _validate_model(model)
        return model
    if rng is None:
        rng = np.random.default_rng(0)
    chunks = []
    for din, dout in model.layer_dims():
        chunks.append(rng.standard_normal((dout, din)).ravel() / np.sqrt(din))
        chunks.append(np.zeros(dout))
    model.params = np.concatenate(chunks)
    _validate_model(model)
    return model


def _unpack(model: EmbeddingModel, params: np.ndarray | None = None):
    """Per-layer (W, b) views into the flat parameter vector."""
    flat = model.params if params is None else params
    layers = []
    offset = 0
    for din, dout in model.layer_dims():
        W = flat[offset:offset + din * dout].reshape(dout, din)
        offset += din * dout
        b = flat[offset:offset + dout]
        offset += dout
        layers.append((W, b))
    return layers


def _activate(name: str, h: np.ndarray) -> np.ndarray:
    return np.maximum(h, 0.0) if name == "relu" else np.tanh(h)


def forward(model: EmbeddingModel, x) -> np.ndarray:
    """Embed one feature vector (m_in,) or a batch (n, m_in)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ValueError(f"expected input dimension {model.input_dim}, got {X.shape}")
    E, _ = _forward_cache(model, X)
    if not np.all(np.isfinite(E)):
        raise FloatingPointError("non-finite activation output")
    return E[0] if single else E


def _forward_cache(model: EmbeddingModel, X: np.ndarray):
    if model.kind == "identity":
        return X, [X]
    layers = _unpack(model)
    cache = [X]
    H = X
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        Z = H @ W.T + b
        if model.kind == "mlp" and i < last:
            H = _activate(model.activation, Z)
            cache.append(Z)
            cache.append(H)
        else:
            H = Z
            cache.append(Z)
    return H, cache


def _backward(model: EmbeddingModel, cache, dE: np.ndarray) -> np.ndarray:
    """Gradient of a scalar loss wrt the flat parameters, given dloss/dE."""
    if model.kind == "identity":
        return np.zeros(0)
    layers = _unpack(model)
    grads = [None] * len(layers)
    dZ = dE
    pos = len(cache) - 1
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        pos -= 1  # skip this layer's Z (or post-activation H handled below)
        if model.kind == "mlp" and i < len(layers) - 1:
            # dZ currently holds dloss/dH for the activation output at `pos+1`
            Z = cache[pos]
            if model.activation == "relu":
                dZ = dZ * (Z > 0)
            else:
                dZ = dZ * (1.0 - np.tanh(Z) ** 2)
            pos -= 1
        H_in = cache[pos]
        dW = dZ.T @ H_in
        db = dZ.sum(axis=0)
        grads[i] = (dW, db)
        dZ = dZ @ W
    return np.concatenate([np.concatenate([dW.ravel(), db]) for dW, db in grads])


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def posterior(e, proto_coords: np.ndarray, spec: DistanceSpec) -> np.ndarray:
    """Softmin of distances to the leaf prototypes, max-shifted for stability.

    Accepts a single embedding (m,) or a batch (n, m); probabilities sum to 1
    and stay finite for distances up to at least 1e6.
    """
    e = np.asarray(e, dtype=np.float64)
    single = e.ndim == 1
    E = e[None, :] if single else e
    d = dist_from_sqnorm(spec, pairwise_sqnorms(E, proto_coords))
    logits = -d
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p[0] if single else p


def data_loss(X, z, model: EmbeddingModel, pi: PrototypeSet, spec: DistanceSpec,
              leaf_rows: np.ndarray | None = None):
    """Mean negative log-posterior of the true classes, with gradients.

    Returns (value, dmodel_params, dproto_coords). `leaf_rows` selects the
    leaf prototypes (row order must match the label indexing) when the set
    also carries internal-node prototypes.
    """
    X = np.asarray(X, dtype=np.float64)
    z = np.asarray(z, dtype=np.intp)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("empty batch")
    n = X.shape[0]
    P_full = pi.coords
    rows = np.arange(pi.size) if leaf_rows is None else np.asarray(leaf_rows, dtype=np.intp)
    P = P_full[rows]

    E, cache = _forward_cache(model, X)
    sq = pairwise_sqnorms(E, P)
    d = dist_from_sqnorm(spec, sq)
    neg = -d
    shift = neg.max(axis=1, keepdims=True)
    lse = shift[:, 0] + np.log(np.exp(neg - shift).sum(axis=1))
    value = float(np.mean(d[np.arange(n), z] + lse))

    p = np.exp(neg - shift)
    p /= p.sum(axis=1, keepdims=True)
    dL_dd = -p / n
    dL_dd[np.arange(n), z] += 1.0 / n

    C = dL_dd * grad_weight_from_sqnorm(spec, sq)
    dE = C.sum(axis=1, keepdims=True) * E - C @ P
    dP = C.sum(axis=0)[:, None] * P - C.T @ E
    dcoords = np.zeros_like(P_full)
    dcoords[rows] = dP
    dmodel = _backward(model, cache, dE)
    return value, dmodel, dcoords


def soft_label_targets(metric: FiniteMetric, z: int, beta: float) -> np.ndarray:
    """Softmin-of-costs target vector for true class z (sharpness beta)."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    logits = -beta * metric.costs[:, z]
    logits = logits - logits.max()
    t = np.exp(logits)
    return t / t.sum()


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters for one training run.

    `lam` is the regularization strength (serialized as "lambda"); `beta`
    is the soft-labels sharpness (targets use exp(-beta * cost), i.e. a
    temperature of 1/beta). Architecture fields describe the embedding
    model built by `train`.
    """

    lam: float = 1.0
    regularizer: str = "disto"
    head: str = "prototypes"
    beta: float = 10.0
    distance: DistanceSpec = DistanceSpec()
    m: int = 64
    include_internal_prototypes: bool = False
    schedule: str = "joint"
    optimizer: OptimizerSpec = OptimizerSpec()
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    triplet_count: int = 10
    architecture: str = "mlp"
    hidden: tuple[int, ...] = (32, 32)
    activation: str = "relu"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"unknown regularizer '{self.regularizer}'")
        if self.head not in HEADS:
            raise ValueError(f"unknown head '{self.head}'")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule '{self.schedule}'")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.m < 1:
            raise ValueError("epochs, batch_size and m must be >= 1")
        if self.regularizer == "rank" and self.triplet_count < 1:
            raise ValueError("rank regularizer needs triplet_count >= 1")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam, "regularizer": self.regularizer, "head": self.head,
            "beta": self.beta, "distance": self.distance.to_dict(), "m": self.m,
            "include_internal_prototypes": self.include_internal_prototypes,
            "schedule": self.schedule, "optimizer": self.optimizer.to_dict(),
            "epochs": self.epochs, "batch_size": self.batch_size, "seed": self.seed,
            "triplet_count": self.triplet_count, "architecture": self.architecture,
            "hidden": list(self.hidden), "activation": self.activation,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        base = TrainConfig()
        return TrainConfig(
            lam=float(d.get("lambda", base.lam)),
            regularizer=d.get("regularizer", base.regularizer),
            head=d.get("head", base.head),
            beta=float(d.get("beta", base.beta)),
            distance=DistanceSpec.from_dict(d["distance"]) if "distance" in d else base.distance,
            m=int(d.get("m", base.m)),
            include_internal_prototypes=bool(d.get("include_internal_prototypes", False)),
            schedule=d.get("schedule", base.schedule),
            optimizer=OptimizerSpec.from_dict(d["optimizer"]) if "optimizer" in d else base.optimizer,
            epochs=int(d.get("epochs", base.epochs)),
            batch_size=int(d.get("batch_size", base.batch_size)),
            seed=int(d.get("seed", base.seed)),
            triplet_count=int(d.get("triplet_count", base.triplet_count)),
            architecture=d.get("architecture", base.architecture),
            hidden=tuple(d.get("hidden", base.hidden)),
            activation=d.get("activation", base.activation),
        )


@dataclass(frozen=True)
class LossBreakdown:
    l_data: float
    l_reg: float
    total: float
    s_star: float | None = None


def total_loss(X, z, model: EmbeddingModel, pi: PrototypeSet,
               metric_reg: FiniteMetric, config: TrainConfig,
               rng: np.random.Generator | None = None,
               leaf_rows: np.ndarray | None = None):
    """Data loss plus lam * regularizer, with gradients for model and prototypes.

    The regularizer only touches the prototypes; model gradients come from
    the data term alone. With lam == 0 (or regularizer "none") the
    regularizer is skipped entirely, so such runs are bit-identical to
    unregularized ones.
    """
    l_data, dmodel, dcoords = data_loss(X, z, model, pi, config.distance, leaf_rows)
    l_reg = 0.0
    s_star = None
    if config.lam > 0 and config.regularizer != "none":
        if config.regularizer == "rank":
            if rng is None:
                raise ValueError("rank regularizer needs an rng for triplet sampling")
            batch = sample_triplets(pi.size, config.triplet_count, rng)
            l_reg, greg = rank_loss(pi, metric_reg, config.distance, batch)
        else:
            fixed = config.regularizer == "disto-fixed-scale"
            l_reg, s_star, greg = disto_loss(pi, metric_reg, config.distance,
                                             fixed_scale=fixed)
        dcoords = dcoords + config.lam * greg
    breakdown = LossBreakdown(l_data=l_data, l_reg=l_reg,
                              total=l_data + config.lam * l_reg, s_star=s_star)
    return breakdown, {"model": dmodel, "proto": dcoords}


# ---------------------------------------------------------------------------
# Baseline heads
# ---------------------------------------------------------------------------

@dataclass
class LinearHead:
    """Linear map from the embedding space to class logits (zero-initialized)."""

    n_classes: int
    input_dim: int
    params: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        want = self.n_classes * self.input_dim + self.n_classes
        if self.params.size == 0:
            self.params = np.zeros(want)
        elif self.params.shape != (want,):
            raise ValueError("head parameter vector has the wrong size")

    def to_dict(self) -> dict:
        return {"n_classes": self.n_classes, "input_dim": self.input_dim,
                "params": [float(p) for p in self.params]}

    @staticmethod
    def from_dict(d: dict) -> "LinearHead":
        return LinearHead(int(d["n_classes"]), int(d["input_dim"]),
                          np.asarray(d["params"], dtype=np.float64))


def head_logits(head: LinearHead, E: np.ndarray) -> np.ndarray:
    W = head.params[:head.n_classes * head.input_dim].reshape(head.n_classes, head.input_dim)
    b = head.params[head.n_classes * head.input_dim:]
    return E @ W.T + b


def _head_loss(X, z, model: EmbeddingModel, head: LinearHead,
               target_table: np.ndarray | None = None):
    """Cross-entropy of the linear head; soft targets when a table is given."""
    X = np.asarray(X, dtype=np.float64)
    z = np.asarray(z, dtype=np.intp)
    n = X.shape[0]
    E, cache = _forward_cache(model, X)
    logits = head_logits(head, E)
    shift = logits.max(axis=1, keepdims=True)
    lse = shift[:, 0] + np.log(np.exp(logits - shift).sum(axis=1))
    logp = logits - lse[:, None]
    if target_table is None:
        T = np.zeros_like(logits)
        T[np.arange(n), z] = 1.0
    else:
        T = target_table[z]
    value = float(-np.sum(T * logp) / n)

    p = np.exp(logp)
    dlogits = (p - T) / n
    W = head.params[:head.n_classes * head.input_dim].reshape(head.n_classes, head.input_dim)
    dW = dlogits.T @ E
    db = dlogits.sum(axis=0)
    dE = dlogits @ W
    dmodel = _backward(model, cache, dE)
    return value, dmodel, np.concatenate([dW.ravel(), db])


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    l_data: float
    l_reg: float
    total: float
    s_star: float | None
    train_er: float
    train_ac: float


@dataclass(frozen=True)
class TrainHistory:
    records: tuple[EpochRecord, ...]

    def to_csv(self) -> str:
        lines = ["epoch,l_data,l_reg,total,s_star,train_er,train_ac"]
        for r in self.records:
            s = "" if r.s_star is None else repr(r.s_star)
            lines.append(f"{r.epoch},{r.l_data!r},{r.l_reg!r},{r.total!r},{s},"
                         f"{r.train_er!r},{r.train_ac!r}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = [
            {"epoch": r.epoch, "l_data": r.l_data, "l_reg": r.l_reg, "total": r.total,
             "s_star": r.s_star, "train_er": r.train_er, "train_ac": r.train_ac}
            for r in self.records
        ]
        return json.dumps(payload, indent=2, sort_keys=True)


@dataclass
class TrainResult:
    model: EmbeddingModel
    prototypes: PrototypeSet
    history: TrainHistory
    head: LinearHead | None = None


def leaf_prototype_rows(tax: Taxonomy, class_map) -> np.ndarray:
    """Prototype rows whose node is a leaf (in class_map order)."""
    return np.array([i for i, nid in enumerate(class_map) if tax.is_leaf(nid)],
                    dtype=np.intp)


def _predict_leaf_indices(model, X, config, proto_leaf=None, head=None,
                          chunk=4096) -> np.ndarray:
    preds = []
    for start in range(0, X.shape[0], chunk):
        E = forward(model, X[start:start + chunk])
        if head is not None:
            preds.append(np.argmax(head_logits(head, E), axis=1))
        else:
            d = dist_from_sqnorm(config.distance, pairwise_sqnorms(E, proto_leaf))
            preds.append(np.argmin(d, axis=1))
    return np.concatenate(preds)


def _fit_prototypes_alone(coords, metric_reg, config, rng, max_steps=10_000,
                          rel_tol=1e-8):
    """Stage 1 of the fixed-proto schedule: minimize the regularizer only."""
    opt = make_optimizer(config.optimizer)
    class_map = tuple(range(coords.shape[0]))
    prev = None
    for _ in range(max_steps):
        pi = PrototypeSet(coords, class_map)
        if config.regularizer == "rank":
            batch = sample_triplets(pi.size, config.triplet_count, rng)
            value, grads = rank_loss(pi, metric_reg, config.distance, batch)
        else:
            fixed = config.regularizer == "disto-fixed-scale"
            value, _, grads = disto_loss(pi, metric_reg, config.distance, fixed_scale=fixed)
        opt.step({"proto": coords}, {"proto": grads})
        if prev is not None and abs(prev - value) < rel_tol * max(1.0, abs(prev)):
            break
        prev = value
    return coords


def train(dataset: Dataset, tax: Taxonomy, metric: FiniteMetric,
          config: TrainConfig, rng: np.random.Generator) -> TrainResult:
    """Minibatch training of the embedding model and classifier.

    `metric` must be the leaves-only cost matrix of `tax` (used for the
    train-AC log, for soft-label targets, and as the regularizer metric
    when internal-node prototypes are off). Deterministic for a fixed rng
    state and single-threaded execution.
    """
    if dataset.class_names != tax.leaf_names:
        raise ValueError("dataset classes do not match taxonomy leaves")
    if metric.class_names != tax.leaf_names:
        raise ValueError("metric classes do not match taxonomy leaves")
    K = len(tax.leaf_ids)
    X_all = dataset.features
    z_all = dataset.labels
    N = X_all.shape[0]

    model = init_embedding_model(config.architecture, X_all.shape[1], config.m,
                                 config.hidden, config.activation, rng)

    proto = None
    head = None
    leaf_rows = None
    metric_reg = metric
    class_map: tuple[int, ...]
    target_table = None
    if config.head == "prototypes":
        if config.include_internal_prototypes:
            metric_reg = cost_matrix(tax, "all-nodes")
            class_map = tuple(range(tax.n_nodes))
        else:
            class_map = tax.leaf_ids
        proto = rng.standard_normal((len(class_map), config.m))
        leaf_rows = leaf_prototype_rows(tax, class_map)
        if config.schedule == "fixed-proto" and config.lam > 0 and config.regularizer != "none":
            proto = _fit_prototypes_alone(proto, metric_reg, config, rng)
    else:
        head = LinearHead(K, config.m)
        if config.head == "soft-labels":
            target_table = np.stack([soft_label_targets(metric, zk, config.beta)
                                     for zk in range(K)])

    params: dict[str, np.ndarray] = {"model": model.params}
    if config.head == "prototypes":
        if config.schedule == "joint":
            params["proto"] = proto
    else:
        params["head"] = head.params
    opt = make_optimizer(config.optimizer)

    records = []
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(N)
        sum_data = 0.0
        sum_reg = 0.0
        sum_sstar = 0.0
        n_sstar = 0
        n_batches = 0
        for start in range(0, N, config.batch_size):
            idx = perm[start:start + config.batch_size]
            Xb, zb = X_all[idx], z_all[idx]
            if config.head == "prototypes":
                pi = PrototypeSet(proto, class_map, config.include_internal_prototypes)
                breakdown, grads = total_loss(Xb, zb, model, pi, metric_reg,
                                              config, rng, leaf_rows)
                if config.schedule == "fixed-proto":
                    grads = {"model": grads["model"]}
            else:
                value, dmodel, dhead = _head_loss(Xb, zb, model, head, target_table)
                breakdown = LossBreakdown(value, 0.0, value, None)
                grads = {"model": dmodel, "head": dhead}
            if not np.isfinite(breakdown.total):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} (lr={config.optimizer.lr})")
            opt.step(params, grads)
            for p in params.values():
                if not np.all(np.isfinite(p)):
                    raise TrainingDivergedError(
                        f"non-finite parameters at epoch {epoch} (lr={config.optimizer.lr})")
            sum_data += breakdown.l_data
            sum_reg += breakdown.l_reg
            if breakdown.s_star is not None:
                sum_sstar += breakdown.s_star
                n_sstar += 1
            n_batches += 1

        l_data = sum_data / n_batches
        l_reg = sum_reg / n_batches
        s_star = sum_sstar / n_sstar if n_sstar else None
        proto_leaf = proto[leaf_rows] if proto is not None else None
        preds = _predict_leaf_indices(model, X_all, config, proto_leaf, head)
        er = float(np.mean(preds != z_all))
        ac = float(np.mean(metric.costs[preds, z_all]))
        records.append(EpochRecord(epoch=epoch, l_data=l_data, l_reg=l_reg,
                                   total=l_data + config.lam * l_reg,
                                   s_star=s_star, train_er=er, train_ac=ac))

    if config.head == "prototypes":
        prototypes = PrototypeSet(proto, class_map, config.include_internal_prototypes)
    else:
        # Stand-in prototypes for non-prototype heads: class means of the
        # training embeddings (used by the distortion diagnostics).
        E = forward(model, X_all)
        means = np.zeros((K, config.m))
        for k in range(K):
            mask = z_all == k
            if mask.any():
                means[k] = E[mask].mean(axis=0)
        prototypes = PrototypeSet(means, tax.leaf_ids, includes_internal=False)
    return TrainResult(model=model, prototypes=prototypes,
                       history=TrainHistory(tuple(records)), head=head)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def finite_difference_check(evaluator, params: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `evaluator(params) -> (value, grad)` must be pure in `params`. Steps are
    h * max(1, |p_i|) per coordinate; errors are normalized by
    max(1, |fd_i|, |analytic_i|).
    """
    params = np.asarray(params, dtype=np.float64)
    _, grad = evaluator(params)
    grad = np.asarray(grad, dtype=np.float64)
    fd = np.zeros_like(params)
    for i in range(params.size):
        step = h * max(1.0, abs(params[i]))
        up = params.copy()
        up[i] += step
        down = params.copy()
        down[i] -= step
        fd[i] = (evaluator(up)[0] - evaluator(down)[0]) / (2.0 * step)
    denom = np.maximum(1.0, np.maximum(np.abs(fd), np.abs(grad)))
    return float(np.max(np.abs(fd - grad) / denom))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    model: EmbeddingModel
    prototypes: PrototypeSet
    distance: DistanceSpec
    taxonomy: Taxonomy
    head: LinearHead | None = None


def save_checkpoint(path, model: EmbeddingModel, prototypes: PrototypeSet,
                    distance: DistanceSpec, tax: Taxonomy,
                    head: LinearHead | None = None) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "distance": distance.to_dict(),
        "model": model.to_dict(),
        "prototypes": {
            "coords": [[float(v) for v in row] for row in prototypes.coords],
            "class_map": list(prototypes.class_map),
            "includes_internal": prototypes.includes_internal,
        },
        "head": None if head is None else head.to_dict(),
        "taxonomy": tax.to_dict(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    proto = payload["prototypes"]
    return Checkpoint(
        model=EmbeddingModel.from_dict(payload["model"]),
        prototypes=PrototypeSet(np.asarray(proto["coords"], dtype=np.float64),
                                tuple(proto["class_map"]),
                                bool(proto["includes_internal"])),
        distance=DistanceSpec.from_dict(payload["distance"]),
        taxonomy=Taxonomy.from_dict(payload["taxonomy"]),
        head=None if payload.get("head") is None else LinearHead.from_dict(payload["head"]),
    )

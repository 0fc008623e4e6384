"""Siamese pair classifiers: shared-extractor MLPs with a concatenation head.

A base model applies one feature extractor to both the pre and post vectors,
concatenates the two feature blocks, and maps them through a hidden layer
(width 128 by default) to a single logit; the score is its sigmoid. Weights
live in one flat float64 vector so training, freezing, and serialization can
treat the model as plain numerics.

Two initialization modes exist: `scratch` (every parameter trains) and
`transfer` (the extractor is copied from a frozen pretrained one and only
the head trains). "Pretrained" here means trained on an auxiliary synthetic
source task and then frozen, standing in for large-corpus pretraining.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from pairbag.data import PairDataset
from pairbag.optimize import AdamState, TrainConfig, adam_step, loss, smooth_target


class TrainingError(RuntimeError):
    """Raised when a training run produces a non-finite loss or gradient."""


@dataclass(frozen=True)
class SiameseTopology:
    """Layer widths of the shared extractor and the pair head.

    extractor_sizes runs input d -> hidden sizes -> feature size f; the head
    maps the concatenated 2f features through `head_hidden` (128 by default)
    to one logit. All activations are ReLU.
    """

    extractor_sizes: tuple[int, ...]
    head_hidden: int = 128

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.extractor_sizes)
        if len(sizes) < 2:
            raise ValueError("extractor needs at least input and feature sizes")
        if any(s < 1 for s in sizes) or self.head_hidden < 1:
            raise ValueError("all layer sizes must be >= 1")
        object.__setattr__(self, "extractor_sizes", sizes)

    @property
    def input_dim(self) -> int:
        return self.extractor_sizes[0]

    @property
    def feature_size(self) -> int:
        return self.extractor_sizes[-1]

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(out, in) per linear layer: extractor layers, then the two head layers."""
        ext = list(zip(self.extractor_sizes[1:], self.extractor_sizes[:-1]))
        head = [(self.head_hidden, 2 * self.feature_size), (1, self.head_hidden)]
        return ext + head

    @property
    def param_count(self) -> int:
        return sum(o * (i + 1) for o, i in self.layer_shapes())

    @property
    def extractor_param_count(self) -> int:
        ext = zip(self.extractor_sizes[1:], self.extractor_sizes[:-1])
        return sum(o * (i + 1) for o, i in ext)


def default_topology(input_dim: int) -> SiameseTopology:
    """Desk-scale default: extractor d -> 64 -> 32, head 64 -> 128 -> 1."""
    return SiameseTopology(extractor_sizes=(input_dim, 64, 32), head_hidden=128)


@dataclass(frozen=True, eq=False)
class BaseModel:
    """One pair classifier: a topology plus a flat float64 weight vector."""

    topology: SiameseTopology
    weights: np.ndarray
    init_mode: str = "scratch"
    trained: bool = False

    def __post_init__(self) -> None:
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.shape != (self.topology.param_count,):
            raise ValueError(
                f"weight vector has {w.size} entries, topology needs "
                f"{self.topology.param_count}"
            )
        if not np.isfinite(w).all():
            raise ValueError("weights must be finite")
        if self.init_mode not in ("scratch", "transfer"):
            raise ValueError(f"init_mode must be 'scratch' or 'transfer', got {self.init_mode!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def extractor_weights(self) -> np.ndarray:
        return self.weights[: self.topology.extractor_param_count]

    @property
    def head_weights(self) -> np.ndarray:
        return self.weights[self.topology.extractor_param_count :]


@dataclass(frozen=True, eq=False)
class PretrainedExtractor:
    """Extractor weights trained on a source task, frozen thereafter."""

    extractor_sizes: tuple[int, ...]
    weights: np.ndarray
    source_seed: int

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.extractor_sizes)
        expected = sum(o * (i + 1) for o, i in zip(sizes[1:], sizes[:-1]))
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.shape != (expected,):
            raise ValueError(f"extractor weights have {w.size} entries, expected {expected}")
        w.setflags(write=False)
        object.__setattr__(self, "extractor_sizes", sizes)
        object.__setattr__(self, "weights", w)


def _unpack(weights: np.ndarray, topology: SiameseTopology) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views (W, b) per layer over the flat vector; W is (out, in)."""
    layers = []
    offset = 0
    for out, inp in topology.layer_shapes():
        w = weights[offset : offset + out * inp].reshape(out, inp)
        offset += out * inp
        b = weights[offset : offset + out]
        offset += out
        layers.append((w, b))
    return layers


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def extract_features(model: BaseModel, x: np.ndarray) -> np.ndarray:
    """Run the shared extractor on vectors x (1-D or (n, d))."""
    a = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if a.shape[1] != model.topology.input_dim:
        raise ValueError(
            f"input has {a.shape[1]} features, model expects {model.topology.input_dim}"
        )
    n_ext = len(model.topology.extractor_sizes) - 1
    for w, b in _unpack(model.weights, model.topology)[:n_ext]:
        a = np.maximum(a @ w.T + b, 0.0)
    return a[0] if np.asarray(x).ndim == 1 else a


def forward(model: BaseModel, pre: np.ndarray, post: np.ndarray):
    """Score in (0, 1) for a pair; both branches share the extractor weights.

    Accepts single vectors (returns a float) or (n, d) batches (returns an
    array of n scores).
    """
    single = np.asarray(pre).ndim == 1
    pre = np.atleast_2d(np.asarray(pre, dtype=np.float64))
    post = np.atleast_2d(np.asarray(post, dtype=np.float64))
    d = model.topology.input_dim
    if pre.shape[1] != d or post.shape[1] != d or pre.shape[0] != post.shape[0]:
        raise ValueError(
            f"pair batch shapes {pre.shape} / {post.shape} do not match input dim {d}"
        )
    scores = _forward_scores(model.weights, model.topology, pre, post)
    return float(scores[0]) if single else scores


def _forward_scores(weights, topology, pre, post) -> np.ndarray:
    layers = _unpack(weights, topology)
    n_ext = len(topology.extractor_sizes) - 1
    feats = []
    for x in (pre, post):
        a = x
        for w, b in layers[:n_ext]:
            a = np.maximum(a @ w.T + b, 0.0)
        feats.append(a)
    h = np.concatenate(feats, axis=1)
    w1, b1 = layers[n_ext]
    w2, b2 = layers[n_ext + 1]
    r1 = np.maximum(h @ w1.T + b1, 0.0)
    logit = (r1 @ w2.T + b2)[:, 0]
    return _sigmoid(logit)


def loss_and_gradient(
    model: BaseModel, pre: np.ndarray, post: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean smoothed-target BCE over the batch and its analytic gradient.

    Backpropagates through both siamese branches, summing each branch's
    contribution into the shared extractor gradients. Raises TrainingError
    on non-finite intermediates.
    """
    topology = model.topology
    layers = _unpack(model.weights, topology)
    n_ext = len(topology.extractor_sizes) - 1
    n = pre.shape[0]

    # Forward with caches: pre-activations z and activations a per branch.
    branch_caches = []
    feats = []
    for x in (pre, post):
        a = x
        zs, as_ = [], [a]
        for w, b in layers[:n_ext]:
            z = a @ w.T + b
            a = np.maximum(z, 0.0)
            zs.append(z)
            as_.append(a)
        branch_caches.append((zs, as_))
        feats.append(a)
    h = np.concatenate(feats, axis=1)
    w1, b1 = layers[n_ext]
    w2, b2 = layers[n_ext + 1]
    z1 = h @ w1.T + b1
    r1 = np.maximum(z1, 0.0)
    logit = (r1 @ w2.T + b2)[:, 0]
    scores = _sigmoid(logit)
    mean_loss = loss(scores, targets)
    if not np.isfinite(mean_loss):
        raise TrainingError("non-finite loss in forward pass")

    grad = np.zeros_like(model.weights)
    g_layers = _unpack(grad, topology)

    # d(mean BCE)/d(logit) = (score - target) / n for sigmoid outputs.
    dlogit = ((scores - targets) / n)[:, None]
    gw2, gb2 = g_layers[n_ext + 1]
    gw2 += dlogit.T @ r1
    gb2 += dlogit.sum(axis=0)
    dr1 = dlogit @ w2
    dz1 = dr1 * (z1 > 0.0)
    gw1, gb1 = g_layers[n_ext]
    gw1 += dz1.T @ h
    gb1 += dz1.sum(axis=0)
    dh = dz1 @ w1

    f = topology.feature_size
    for branch, dfeat in enumerate((dh[:, :f], dh[:, f:])):
        zs, as_ = branch_caches[branch]
        da = dfeat
        for li in range(n_ext - 1, -1, -1):
            dz = da * (zs[li] > 0.0)
            gw, gb = g_layers[li]
            gw += dz.T @ as_[li]
            gb += dz.sum(axis=0)
            if li > 0:
                da = dz @ layers[li][0]
    if not np.isfinite(grad).all():
        raise TrainingError("non-finite gradient")
    return mean_loss, grad


INIT_GAIN = np.sqrt(6.0)


def init_bound(fan_in: int) -> float:
    """Half-width of the uniform init for a layer with the given fan-in.

    The rectifier-gain bound sqrt(6/fan_in) keeps activation magnitudes
    roughly constant across ReLU layers, which matters here because the
    small fixed fine-tuning budgets rely on reasonably sized features.
    """
    return float(INIT_GAIN / np.sqrt(fan_in))


def init_scratch(topology: SiameseTopology, seed: int) -> BaseModel:
    """Fresh model with scaled-uniform fan-in init: U(-sqrt(6/fan_in), +).

    Per layer, W is drawn first and then b, both from the same bound, in
    layer order; deterministic given the seed.
    """
    rng = np.random.default_rng(seed)
    weights = np.empty(topology.param_count)
    offset = 0
    for out, inp in topology.layer_shapes():
        bound = init_bound(inp)
        weights[offset : offset + out * inp] = rng.uniform(-bound, bound, out * inp)
        offset += out * inp
        weights[offset : offset + out] = rng.uniform(-bound, bound, out)
        offset += out
    return BaseModel(topology=topology, weights=weights, init_mode="scratch")


def init_transfer(
    topology: SiameseTopology, pretrained: PretrainedExtractor, seed: int
) -> BaseModel:
    """Model whose extractor is the frozen pretrained one; head is fresh.

    Head weights use the same fan-in scheme as init_scratch, drawn from
    `seed`. fine_tune will leave the extractor slice bitwise untouched.
    """
    if pretrained.extractor_sizes != topology.extractor_sizes:
        raise ValueError(
            f"pretrained extractor sizes {pretrained.extractor_sizes} do not match "
            f"topology {topology.extractor_sizes}"
        )
    rng = np.random.default_rng(seed)
    weights = np.empty(topology.param_count)
    n_ext_params = topology.extractor_param_count
    weights[:n_ext_params] = pretrained.weights
    offset = n_ext_params
    n_ext = len(topology.extractor_sizes) - 1
    for out, inp in topology.layer_shapes()[n_ext:]:
        bound = init_bound(inp)
        weights[offset : offset + out * inp] = rng.uniform(-bound, bound, out * inp)
        offset += out * inp
        weights[offset : offset + out] = rng.uniform(-bound, bound, out)
        offset += out
    return BaseModel(topology=topology, weights=weights, init_mode="transfer")


def _train_weights(
    model: BaseModel,
    pre: np.ndarray,
    post: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    head_only: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Full-batch Adam loop; returns (final weights, per-iteration losses)."""
    targets = smooth_target(labels, config.alpha)
    weights = model.weights.copy()
    state = AdamState.zeros(weights.size)
    trace = np.empty(config.iterations)
    n_frozen = model.topology.extractor_param_count if head_only else 0
    for step in range(config.iterations):
        step_model = BaseModel(
            topology=model.topology, weights=weights, init_mode=model.init_mode
        )
        step_loss, grad = loss_and_gradient(step_model, pre, post, targets)
        if not np.isfinite(step_loss):
            raise TrainingError(f"non-finite loss at iteration {step + 1}")
        if n_frozen:
            grad[:n_frozen] = 0.0  # zero grad + zero moments leave frozen slice bitwise intact
        weights, state = adam_step(weights, grad, state, config)
        trace[step] = step_loss
    return weights, trace


def fine_tune(
    model: BaseModel,
    indices: np.ndarray,
    dataset: PairDataset,
    config: TrainConfig,
) -> tuple[BaseModel, np.ndarray]:
    """Train a model on dataset rows `indices` with full-batch Adam.

    In transfer mode only head parameters change. Returns the trained model
    and the training-loss trace (one entry per iteration, evaluated before
    each step; no monotonicity is promised).
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("training index set is empty")
    pre = dataset.pre[idx]
    post = dataset.post[idx]
    labels = dataset.labels[idx]
    head_only = model.init_mode == "transfer"
    weights, trace = _train_weights(model, pre, post, labels, config, head_only)
    trained = BaseModel(
        topology=model.topology, weights=weights, init_mode=model.init_mode, trained=True
    )
    return trained, trace


def train_source_model(
    source: PairDataset, topology: SiameseTopology, budget: int, seed: int,
    config: TrainConfig | None = None,
) -> BaseModel:
    """Train a scratch model on the whole source dataset for `budget` steps."""
    if len(source) == 0:
        raise ValueError("source dataset is empty")
    if config is None:
        config = TrainConfig(iterations=budget, seed=seed)
    else:
        config = TrainConfig(
            iterations=budget,
            learning_rate=config.learning_rate,
            alpha=config.alpha,
            temperature=config.temperature,
            adam_beta1=config.adam_beta1,
            adam_beta2=config.adam_beta2,
            adam_eps=config.adam_eps,
            seed=seed,
        )
    model = init_scratch(topology, seed)
    weights, _ = _train_weights(
        model, source.pre, source.post, source.labels, config, head_only=False
    )
    return BaseModel(topology=topology, weights=weights, init_mode="scratch", trained=True)


def pretrain_extractor(
    source: PairDataset, topology: SiameseTopology, budget: int, seed: int
) -> PretrainedExtractor:
    """Train on the auxiliary source task, then freeze the extractor.

    The source dataset must be disjoint from any evaluation data; with
    budget 0 the extractor equals its scratch initialization.
    """
    trained = train_source_model(source, topology, budget, seed)
    return PretrainedExtractor(
        extractor_sizes=topology.extractor_sizes,
        weights=trained.extractor_weights.copy(),
        source_seed=seed,
    )

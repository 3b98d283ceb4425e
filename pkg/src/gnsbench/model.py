"""Reference GraphSage (mean aggregator) with manual forward/backward.

Each layer concatenates a node's own state with the weighted mean of its
sampled neighbors' states, applies an affine map, and a ReLU on every layer
but the last. The neighbor mean uses the sampled edges' importance weights
and divides by the node's *true* degree, so an unbiased weighted sum stays
an unbiased mean estimate. All model math runs in float64 so gradients can
be checked against central finite differences.

Checkpoint format (little-endian):

    magic       4 bytes  b"GNSW"
    version     u16      1
    num_layers  u32
    dims        u32[num_layers + 1]
    per layer:  W as f32[2*in_dim*out_dim] row-major, then b as f32[out_dim]
"""

from __future__ import annotations

import csv
import struct
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graph import Graph, adjacency
from .pool import SamplerPool
from .sampling import MiniBatch, SamplerConfig

CHECKPOINT_MAGIC = b"GNSW"
CHECKPOINT_VERSION = 1


@dataclass
class ModelParams:
    """Per-layer weights of shape (2*in_dim, out_dim) plus biases."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dims: tuple[int, ...]

    @property
    def num_layers(self) -> int:
        return len(self.weights)


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 0.003
    batch_size: int = 100
    hidden_dim: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        tensors = params.weights + params.biases
        return cls(m=[np.zeros_like(t) for t in tensors],
                   v=[np.zeros_like(t) for t in tensors])


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_f1: float
    val_f1: float
    test_f1: float
    seconds: float
    mean_input_nodes: float
    mean_cached: float


@dataclass
class TrainReport:
    rows: list[EpochStats] = field(default_factory=list)
    final_train_f1: float = 0.0
    final_val_f1: float = 0.0
    final_test_f1: float = 0.0
    params: "ModelParams | None" = None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "loss", "train_f1", "val_f1", "test_f1",
                        "sec", "mean_input_nodes", "mean_cached"])
            for r in self.rows:
                w.writerow([r.epoch, f"{r.loss:.6f}", f"{r.train_f1:.4f}",
                            f"{r.val_f1:.4f}", f"{r.test_f1:.4f}",
                            f"{r.seconds:.3f}", f"{r.mean_input_nodes:.1f}",
                            f"{r.mean_cached:.1f}"])


def init_params(dims, seed: int = 0) -> ModelParams:
    """Glorot-uniform initialization; the self/neighbor concat doubles fan-in."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (2 * d_in + d_out))
        weights.append(rng.uniform(-limit, limit, size=(2 * d_in, d_out)))
        biases.append(np.zeros(d_out))
    return ModelParams(weights=weights, biases=biases, dims=tuple(dims))


def micro_f1(pred: np.ndarray, true: np.ndarray) -> float:
    """Micro-averaged F1; equals accuracy for single-label classification."""
    if len(true) == 0:
        return 0.0
    return float(np.mean(pred == true))


def _block_matrices(block):
    nsrc, ndst = len(block.src_nodes), len(block.dst_nodes)
    agg_mat = sp.coo_matrix(
        (block.edge_weight, (block.edge_dst, block.edge_src)),
        shape=(ndst, nsrc)).tocsr()
    norm = np.maximum(block.dst_degree, 1).astype(np.float64)
    self_pos = np.searchsorted(block.src_nodes, block.dst_nodes)
    return agg_mat, norm, self_pos


def _forward_pass(mb: MiniBatch, features: np.ndarray, params: ModelParams):
    """Run the chain; returns per-layer intermediates for backprop."""
    if len(mb.blocks) != params.num_layers:
        raise ValueError(
            f"batch has {len(mb.blocks)} layers, model has {params.num_layers}")
    h = features[mb.input_nodes].astype(np.float64)
    if h.shape[1] != params.dims[0]:
        raise ValueError(
            f"feature dim {h.shape[1]} != model input dim {params.dims[0]}")
    steps = []
    for li, block in enumerate(mb.blocks):
        agg_mat, norm, self_pos = _block_matrices(block)
        agg = (agg_mat @ h) / norm[:, None]
        cat = np.concatenate([h[self_pos], agg], axis=1)
        z = cat @ params.weights[li] + params.biases[li]
        out = np.maximum(z, 0.0) if li + 1 < len(mb.blocks) else z
        steps.append((h, agg_mat, norm, self_pos, cat, z))
        h = out
    return h, steps


def forward(mb: MiniBatch, features: np.ndarray, params: ModelParams) -> np.ndarray:
    """Logits for mb.targets (rows follow the sorted target order)."""
    logits, _ = _forward_pass(mb, features, params)
    return logits


def full_batch_forward(g: Graph, params: ModelParams,
                       features: np.ndarray | None = None) -> np.ndarray:
    """Dense full-neighborhood forward over every node; the sampling oracle."""
    if features is None:
        if g.features is None:
            raise ValueError("graph has no features")
        features = g.features
    h = np.asarray(features, dtype=np.float64)
    if h.shape[1] != params.dims[0]:
        raise ValueError(
            f"feature dim {h.shape[1]} != model input dim {params.dims[0]}")
    adj = adjacency(g)
    norm = np.maximum(g.degrees, 1).astype(np.float64)
    for li in range(params.num_layers):
        agg = (adj @ h) / norm[:, None]
        cat = np.concatenate([h, agg], axis=1)
        z = cat @ params.weights[li] + params.biases[li]
        h = np.maximum(z, 0.0) if li + 1 < params.num_layers else z
    return h


def loss_and_grad(logits: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy and its gradient wrt the logits."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ValueError(f"label out of range for {c} classes")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


@dataclass
class ParamGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


def backward(mb: MiniBatch, features: np.ndarray, params: ModelParams,
             grad_logits: np.ndarray) -> ParamGrads:
    """Exact gradients of forward() wrt every weight and bias."""
    _, steps = _forward_pass(mb, features, params)
    d_w = [None] * params.num_layers
    d_b = [None] * params.num_layers
    dh = np.asarray(grad_logits, dtype=np.float64)
    for li in range(params.num_layers - 1, -1, -1):
        h, agg_mat, norm, self_pos, cat, z = steps[li]
        dz = dh if li == params.num_layers - 1 else dh * (z > 0)
        d_w[li] = cat.T @ dz
        d_b[li] = dz.sum(axis=0)
        dcat = dz @ params.weights[li].T
        d_in = params.dims[li]
        dself, dagg = dcat[:, :d_in], dcat[:, d_in:]
        dh = agg_mat.T @ (dagg / norm[:, None])
        np.add.at(dh, self_pos, dself)
    return ParamGrads(weights=d_w, biases=d_b)


def adam_step(params: ModelParams, grads: ParamGrads, state: AdamState,
              config: TrainConfig) -> None:
    """One bias-corrected Adam update, in place."""
    state.step += 1
    t = state.step
    tensors = params.weights + params.biases
    gs = grads.weights + grads.biases
    b1, b2 = config.beta1, config.beta2
    for i, (p, gr) in enumerate(zip(tensors, gs)):
        state.m[i] = b1 * state.m[i] + (1 - b1) * gr
        state.v[i] = b2 * state.v[i] + (1 - b2) * gr * gr
        m_hat = state.m[i] / (1 - b1 ** t)
        v_hat = state.v[i] / (1 - b2 ** t)
        p -= config.lr * m_hat / (np.sqrt(v_hat) + config.eps)


def evaluate(g: Graph, params: ModelParams) -> dict[str, float]:
    """Micro-F1 on the masks using full-neighborhood inference."""
    logits = full_batch_forward(g, params)
    pred = logits.argmax(axis=1)
    out = {}
    for split, mask in (("train", g.train_mask), ("val", g.val_mask),
                        ("test", g.test_mask)):
        out[split] = micro_f1(pred[mask], g.labels[mask]) if mask is not None \
            else 0.0
    return out


def train(g: Graph, sampler_config: SamplerConfig, train_config: TrainConfig,
          num_workers: int = 1, batch_hook=None) -> TrainReport:
    """Run the full training loop and return per-epoch statistics.

    ``batch_hook(epoch, index, minibatch, cache, sample_ms, train_ms)`` is
    called after every optimizer step; the benchmark harness hangs its
    per-batch instrumentation off it.
    """
    if g.labels is None or g.train_mask is None:
        raise ValueError("training needs labels and split masks")
    num_classes = int(g.labels.max()) + 1
    L = sampler_config.num_layers
    dims = (g.feature_dim,) + (train_config.hidden_dim,) * (L - 1) \
        + (num_classes,)
    params = init_params(dims, seed=train_config.seed)
    state = AdamState.zeros_like(params)
    pool = SamplerPool(g, sampler_config, num_workers=num_workers)
    report = TrainReport()
    for epoch in range(train_config.epochs):
        t_epoch = time.perf_counter()
        losses, input_counts, cached_counts = [], [], []
        for item in pool.iter_epoch(epoch):
            mb = item.minibatch
            t0 = time.perf_counter()
            logits = forward(mb, g.features, params)
            loss, grad = loss_and_grad(logits, g.labels[mb.targets])
            grads = backward(mb, g.features, params, grad)
            adam_step(params, grads, state, train_config)
            train_ms = (time.perf_counter() - t0) * 1000.0
            losses.append(loss)
            input_counts.append(len(mb.input_nodes))
            cached = 0
            if pool.cache is not None:
                cached = int(pool.cache.nodes.mask[mb.input_nodes].sum())
            cached_counts.append(cached)
            if batch_hook is not None:
                batch_hook(epoch, item.index, mb, pool.cache, item.sample_ms,
                           train_ms)
        f1 = evaluate(g, params)
        report.rows.append(EpochStats(
            epoch=epoch, loss=float(np.mean(losses)) if losses else 0.0,
            train_f1=f1["train"], val_f1=f1["val"], test_f1=f1["test"],
            seconds=time.perf_counter() - t_epoch,
            mean_input_nodes=float(np.mean(input_counts)) if input_counts else 0.0,
            mean_cached=float(np.mean(cached_counts)) if cached_counts else 0.0))
    f1 = evaluate(g, params)
    report.final_train_f1 = f1["train"]
    report.final_val_f1 = f1["val"]
    report.final_test_f1 = f1["test"]
    report.params = params
    return report


def save_checkpoint(params: ModelParams, path) -> None:
    header = struct.pack("<4sHI", CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
                         params.num_layers)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.asarray(params.dims, dtype=np.uint32).tobytes())
        for w, b in zip(params.weights, params.biases):
            f.write(np.ascontiguousarray(w, dtype=np.float32).tobytes())
            f.write(np.ascontiguousarray(b, dtype=np.float32).tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as f:
        raw = f.read()
    head = struct.Struct("<4sHI")
    magic, version, num_layers = head.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = head.size
    dims = [int(d) for d in np.frombuffer(raw, dtype=np.uint32,
                                          count=num_layers + 1, offset=off)]
    off += 4 * (num_layers + 1)
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(raw, dtype=np.float32, count=2 * d_in * d_out,
                          offset=off).reshape(2 * d_in, d_out)
        off += w.nbytes
        b = np.frombuffer(raw, dtype=np.float32, count=d_out, offset=off)
        off += b.nbytes
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    return ModelParams(weights=weights, biases=biases, dims=tuple(dims))

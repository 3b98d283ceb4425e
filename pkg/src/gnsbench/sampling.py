"""Mini-batch construction under three strategies.

* NS: node-wise uniform neighbor sampling with sum-unbiased edge weights.
* GNS: cache-first neighbor sampling; per seed, up to k neighbors are drawn
  uniformly from the cached neighbors, and (unless the layer is cache-only)
  the remainder is filled uniformly from the uncached neighbors.
* LADIES: layer-wise sampling of a fixed number of nodes reachable from the
  previous layer, with probabilities from squared normalized-adjacency
  column norms.

Every strategy emits the same structure: a chain of LayerBlocks ordered
input layer first, where each block's dst set equals the next block's src
seed set and edge weights turn the weighted neighbor sum into an estimator
of the full-neighborhood sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cache import CacheState, ProbVector, sample_cache
from .graph import Graph, InvariantError, gather_rows

STRATEGIES = ("NS", "GNS", "LADIES")
WEIGHT_POLICIES = ("uniform", "gns-paper", "gns-exact", "ladies")

_FILL_STREAM = 21


@dataclass(frozen=True, eq=False)
class LayerBlock:
    """One layer's sampled bipartite structure.

    ``dst_nodes`` are the layer's seeds, ``src_nodes`` the sorted union of
    the seeds and their sampled neighbors. ``edge_src``/``edge_dst`` index
    into those arrays; every encoded edge is a real graph edge. ``fanout``
    is None for strategies without a per-dst cap (LADIES).
    """

    dst_nodes: np.ndarray
    src_nodes: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_weight: np.ndarray
    edge_cached: np.ndarray
    dst_degree: np.ndarray
    fanout: int | None
    policy: str

    def __post_init__(self):
        for arr in (self.dst_nodes, self.src_nodes, self.edge_src,
                    self.edge_dst, self.edge_weight, self.edge_cached,
                    self.dst_degree):
            arr.setflags(write=False)

    @property
    def num_edges(self) -> int:
        return int(self.edge_src.shape[0])


@dataclass(frozen=True, eq=False)
class MiniBatch:
    """Chained LayerBlocks, input layer first."""

    blocks: tuple[LayerBlock, ...]
    targets: np.ndarray
    input_nodes: np.ndarray

    def __post_init__(self):
        self.targets.setflags(write=False)
        self.input_nodes.setflags(write=False)

    @property
    def num_layers(self) -> int:
        return len(self.blocks)


@dataclass(frozen=True)
class SamplerConfig:
    """Everything a sampling run needs.

    ``fanouts`` is ordered output layer first (fanouts[0] applies to the
    targets' own neighbor draw); its length fixes the number of layers,
    which is all LADIES uses it for. ``weight_policy`` defaults per
    strategy: uniform for NS, gns-paper for GNS, ladies for LADIES.
    """

    strategy: str = "NS"
    fanouts: tuple[int, ...] = (15, 10, 5)
    layer_size: int = 512
    cache_frac: float = 0.01
    cache_period: int = 1
    cache_mode: str = "auto"
    input_layer_cache_only: bool = True
    batch_size: int = 1000
    seed: int = 0
    weight_policy: str = ""
    exact_resamples: int = 64

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if len(self.fanouts) < 1 or any(k < 1 for k in self.fanouts):
            raise ValueError("fanouts must be a non-empty tuple of counts >= 1")
        if not (0.0 < self.cache_frac <= 1.0):
            raise ValueError("cache_frac must be in (0, 1]")
        if self.cache_period < 1:
            raise ValueError("cache_period must be >= 1")
        if self.cache_mode not in ("auto", "degree", "walk"):
            raise ValueError(f"unknown cache_mode {self.cache_mode!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.layer_size < 1:
            raise ValueError("layer_size must be >= 1")
        if not self.weight_policy:
            default = {"NS": "uniform", "GNS": "gns-paper",
                       "LADIES": "ladies"}[self.strategy]
            object.__setattr__(self, "weight_policy", default)
        if self.weight_policy not in WEIGHT_POLICIES:
            raise ValueError(f"unknown weight_policy {self.weight_policy!r}")

    @property
    def num_layers(self) -> int:
        return len(self.fanouts)


def _select_per_row(counts: np.ndarray, take: np.ndarray, keys: np.ndarray):
    """Indices (into the concatenated rows) of the per-row ``take`` smallest keys."""
    total = len(keys)
    row = np.repeat(np.arange(len(counts)), counts)
    order = np.lexsort((keys, row))
    block_starts = np.cumsum(counts) - counts
    rank = np.arange(total, dtype=np.int64) - np.repeat(block_starts, counts)
    return order[rank < np.repeat(take, counts)]


def _assemble(g: Graph, seeds, dst_rows, srcs, weights, cached, fanout, policy):
    dst_nodes = seeds
    src_nodes = np.unique(np.concatenate([seeds, srcs]))
    return LayerBlock(
        dst_nodes=dst_nodes,
        src_nodes=src_nodes,
        edge_src=np.searchsorted(src_nodes, srcs).astype(np.int64),
        edge_dst=np.asarray(dst_rows, dtype=np.int64),
        edge_weight=np.asarray(weights, dtype=np.float64),
        edge_cached=np.asarray(cached, dtype=bool),
        dst_degree=g.degrees[dst_nodes].astype(np.int64),
        fanout=fanout,
        policy=policy,
    )


def sample_neighbors_uniform(g: Graph, seeds, k: int, rng) -> LayerBlock:
    """Uniform without-replacement draw of min(k, deg) neighbors per seed.

    Edge weight is deg / min(k, deg): the weighted sum over sampled
    neighbors is an unbiased estimator of the full-neighborhood sum.
    """
    if k < 1:
        raise ValueError("fanout must be >= 1")
    seeds = np.unique(np.asarray(seeds, dtype=np.int64))
    cand, counts, _ = gather_rows(g.indptr, g.indices, seeds)
    take = np.minimum(k, counts)
    sel = _select_per_row(counts, take, rng.random(len(cand)))
    dst_rows = np.repeat(np.arange(len(seeds)), counts)[sel]
    weights = (counts / np.maximum(take, 1))[dst_rows]
    return _assemble(g, seeds, dst_rows, cand[sel], weights,
                     np.zeros(len(sel), dtype=bool), k, "uniform")


def gns_weight_paper(p_v: float, cache_size: int, k: int, n_cached: int) -> float:
    """Importance weight for a cache-sampled neighbor.

    The per-edge coefficient is p_C * k / min(k, n_cached) where
    p_C = 1 - (1 - p_v)^cache_size; the weight is its reciprocal. Raises
    when p_C is zero (an impossible draw cannot be reweighted).
    """
    if n_cached < 1 or k < 1:
        raise ValueError("need n_cached >= 1 and k >= 1")
    from .cache import inclusion_prob
    p_c = inclusion_prob(p_v, cache_size)
    if p_c <= 0.0:
        raise ValueError("inclusion probability is zero; cannot weight draw")
    return min(k, n_cached) / (k * p_c)


def sample_neighbors_gns(g: Graph, cache: CacheState, seeds, k: int,
                         cache_only: bool, rng, policy: str = "gns-paper",
                         exact_weights: np.ndarray | None = None) -> LayerBlock:
    """Cache-first neighbor draw: up to k uniform picks from N(v) ∩ C, then
    (unless ``cache_only``) a uniform fill from N(v) \\ C up to k total.

    Weights: under ``gns-paper``, cached edges get the reciprocal coefficient
    of :func:`gns_weight_paper` computed from the cache's stored inclusion
    probabilities; fill edges get rest/f, the reciprocal of their uniform
    fill inclusion probability. Under ``gns-exact``, every edge gets the
    reciprocal of its entry in ``exact_weights`` (a CSR-aligned table from
    :func:`estimate_edge_inclusion`).
    """
    if k < 1:
        raise ValueError("fanout must be >= 1")
    if policy not in ("gns-paper", "gns-exact"):
        raise ValueError(f"unsupported GNS weight policy {policy!r}")
    if policy == "gns-exact" and exact_weights is None:
        raise ValueError("gns-exact policy needs an edge-inclusion table")
    seeds = np.unique(np.asarray(seeds, dtype=np.int64))
    nrows = len(seeds)

    c_cand, c_counts, _ = gather_rows(cache.cached_indptr,
                                      cache.cached_indices, seeds)
    m = np.minimum(k, c_counts)
    c_sel = _select_per_row(c_counts, m, rng.random(len(c_cand)))
    c_dst = np.repeat(np.arange(nrows), c_counts)[c_sel]
    c_src = c_cand[c_sel]

    cand, counts, positions = gather_rows(g.indptr, g.indices, seeds)
    if cache_only:
        u_dst = np.empty(0, dtype=np.int64)
        u_src = np.empty(0, dtype=np.int64)
        u_pos = np.empty(0, dtype=np.int64)
        fill = np.zeros(nrows, dtype=np.int64)
        rest = counts - c_counts
    else:
        uncached = ~cache.nodes.mask[cand]
        rows_all = np.repeat(np.arange(nrows), counts)
        u_cand = cand[uncached]
        u_rows = rows_all[uncached]
        u_positions = positions[uncached]
        rest = np.bincount(u_rows, minlength=nrows).astype(np.int64)
        fill = np.minimum(k - m, rest)
        u_sel = _select_per_row(rest, fill, rng.random(len(u_cand)))
        u_dst = u_rows[u_sel]
        u_src = u_cand[u_sel]
        u_pos = u_positions[u_sel]

    if policy == "gns-exact":
        # recover CSR positions of the cached picks for the table lookup;
        # (row, neighbor) keys are globally sorted because rows ascend and
        # each neighbor list is sorted
        rows_all = np.repeat(np.arange(nrows), counts)
        stride = g.num_nodes + 1
        row_keys = rows_all * stride + cand
        idx = np.searchsorted(row_keys, c_dst * stride + c_src)
        c_pos = positions[idx]
        q = np.concatenate([exact_weights[c_pos], exact_weights[u_pos]])
        if np.any(q <= 0):
            raise InvariantError("sampled an edge with zero estimated inclusion")
        weights = 1.0 / q
    else:
        n_cached_of_dst = np.maximum(c_counts, 1)
        coeff = (cache.inclusion[c_src]
                 * (k / np.minimum(k, n_cached_of_dst)[c_dst]))
        if np.any(coeff <= 0):
            raise ValueError("inclusion probability is zero for a cached draw")
        c_w = 1.0 / coeff
        u_w = (rest / np.maximum(fill, 1))[u_dst]
        weights = np.concatenate([c_w, u_w])

    dst_rows = np.concatenate([c_dst, u_dst])
    srcs = np.concatenate([c_src, u_src])
    cached_flags = np.concatenate([np.ones(len(c_src), dtype=bool),
                                   np.zeros(len(u_src), dtype=bool)])
    return _assemble(g, seeds, dst_rows, srcs, weights, cached_flags, k,
                     policy)


def estimate_edge_inclusion(g: Graph, probs: ProbVector, cache_size: int,
                            k: int, cache_only: bool, resamples: int = 64,
                            seed: int = 0) -> np.ndarray:
    """CSR-aligned table of per-edge inclusion probabilities under GNS.

    Entry e estimates the probability that the neighbor g.indices[e] of its
    row node ends up among the row's sampled neighbors, jointly over the
    cache draw and the neighbor draw. The neighbor draw is averaged
    analytically per resampled cache; only the cache draw is Monte Carlo.
    """
    n = g.num_nodes
    deg = g.degrees.astype(np.float64)
    rows = np.repeat(np.arange(n), g.degrees)
    q = np.zeros(g.num_edges, dtype=np.float64)
    for r in range(resamples):
        cset = sample_cache(probs, cache_size, [seed, _FILL_STREAM, r])
        cflag = cset.mask[g.indices]
        nc = np.bincount(rows, weights=cflag, minlength=n)
        m = np.minimum(k, nc)
        rest = deg - nc
        p_cached = np.divide(m, nc, out=np.zeros(n), where=nc > 0)
        if cache_only:
            p_fill = np.zeros(n)
        else:
            fill = np.minimum(k - m, rest)
            p_fill = np.divide(fill, rest, out=np.zeros(n), where=rest > 0)
        q += np.where(cflag, p_cached[rows], p_fill[rows])
    return q / resamples


def build_minibatch(g: Graph, cache: CacheState | None, targets,
                    config: SamplerConfig, rng,
                    exact_tables: dict | None = None) -> MiniBatch:
    """Chain L LayerBlocks from the targets down to the input layer.

    For GNS with ``input_layer_cache_only``, the innermost layer samples
    exclusively from the cache. ``exact_tables`` maps (fanout, cache_only)
    to edge-inclusion tables when the gns-exact policy is active.
    """
    if config.strategy == "LADIES":
        return sample_ladies(g, targets, config.layer_size,
                             config.num_layers, rng)
    num_layers = config.num_layers
    seeds = np.unique(np.asarray(targets, dtype=np.int64))
    blocks: list[LayerBlock] = []
    for layer in range(num_layers, 0, -1):
        k = config.fanouts[num_layers - layer]
        if config.strategy == "NS":
            block = sample_neighbors_uniform(g, seeds, k, rng)
        else:
            if cache is None:
                raise ValueError("GNS sampling needs a CacheState")
            cache_only = config.input_layer_cache_only and layer == 1
            table = None
            if config.weight_policy == "gns-exact":
                table = (exact_tables or {}).get((k, cache_only))
                if table is None:
                    raise ValueError(
                        f"missing edge-inclusion table for fanout={k}, "
                        f"cache_only={cache_only}")
            block = sample_neighbors_gns(g, cache, seeds, k, cache_only, rng,
                                         policy=config.weight_policy,
                                         exact_weights=table)
        blocks.append(block)
        seeds = block.src_nodes
    blocks.reverse()
    return MiniBatch(blocks=tuple(blocks), targets=blocks[-1].dst_nodes,
                     input_nodes=blocks[0].src_nodes)


def _ladies_scores(g: Graph, prev: np.ndarray) -> np.ndarray:
    """Squared column norms of D^{-1/2}(A+I)D^{-1/2} restricted to rows prev."""
    d_hat = (g.degrees + 1).astype(np.float64)
    neigh, counts, _ = gather_rows(g.indptr, g.indices, prev)
    owners = np.repeat(prev, counts)
    scores = np.bincount(neigh, weights=1.0 / (d_hat[owners] * d_hat[neigh]),
                         minlength=g.num_nodes)
    scores[prev] += 1.0 / d_hat[prev] ** 2
    return scores


def sample_ladies(g: Graph, targets, layer_size: int, num_layers: int,
                  rng) -> MiniBatch:
    """Layer-wise dependent sampling.

    Per layer, the candidate set is the union of the previous layer's
    neighborhoods; min(layer_size, |candidates|) of them are drawn without
    replacement with probability proportional to the squared
    normalized-adjacency column norms over the previous layer. Previous
    layer nodes are always carried into the next src set, and the block
    keeps every graph edge between consecutive layers. Edge weights are
    1 / min(1, s*q), the reciprocal of the (with-replacement) selection
    probability, 1 for carried-over and saturated nodes.
    """
    if layer_size < 0:
        raise ValueError("layer_size must be >= 0")
    prev = np.unique(np.asarray(targets, dtype=np.int64))
    blocks: list[LayerBlock] = []
    for _ in range(num_layers):
        scores = _ladies_scores(g, prev)
        neigh_all, counts, _ = gather_rows(g.indptr, g.indices, prev)
        cand_mask = np.zeros(g.num_nodes, dtype=bool)
        cand_mask[neigh_all] = True
        cand = np.flatnonzero(cand_mask)
        s = min(layer_size, len(cand))
        pi = np.ones(g.num_nodes, dtype=np.float64)
        if s < len(cand) and s > 0:
            qn = scores[cand] / scores[cand].sum()
            keys = rng.exponential(size=len(cand)) / qn
            pick = np.argpartition(keys, s)[:s]
            sel = cand[pick]
            pi[sel] = np.minimum(1.0, s * qn[pick])
        elif s == 0:
            sel = np.empty(0, dtype=np.int64)
        else:
            sel = cand
        pi[prev] = 1.0  # carried-over nodes are surely present

        src = np.unique(np.concatenate([prev, sel]))
        src_mask = np.zeros(g.num_nodes, dtype=bool)
        src_mask[src] = True
        # all graph edges from the src set into the dst (prev) set
        keep = src_mask[neigh_all]
        e_src = neigh_all[keep]
        e_dst = np.repeat(np.arange(len(prev)), counts)[keep]
        weights = 1.0 / pi[e_src]
        block = LayerBlock(
            dst_nodes=prev,
            src_nodes=src,
            edge_src=np.searchsorted(src, e_src).astype(np.int64),
            edge_dst=e_dst.astype(np.int64),
            edge_weight=weights,
            edge_cached=np.zeros(len(e_src), dtype=bool),
            dst_degree=g.degrees[prev].astype(np.int64),
            fanout=None,
            policy="ladies",
        )
        blocks.append(block)
        prev = src
    blocks.reverse()
    return MiniBatch(blocks=tuple(blocks), targets=blocks[-1].dst_nodes,
                     input_nodes=blocks[0].src_nodes)


def isolated_fraction(mb: MiniBatch) -> float:
    """Fraction of targets with no sampled in-edges at the input layer.

    Self information always flows through the concatenated self state, so a
    target only counts as isolated when the input-layer block gives it zero
    in-edges from other nodes.
    """
    block = mb.blocks[0]
    if len(mb.targets) == 0:
        return 0.0
    indeg = np.bincount(block.edge_dst, minlength=len(block.dst_nodes))
    tpos = np.searchsorted(block.dst_nodes, mb.targets)
    return float(np.mean(indeg[tpos] == 0))


def validate_minibatch(g: Graph, mb: MiniBatch) -> None:
    """Check the structural invariants of a MiniBatch; raises InvariantError."""
    for i, block in enumerate(mb.blocks):
        if np.any(np.diff(block.dst_nodes) <= 0) or np.any(np.diff(block.src_nodes) <= 0):
            raise InvariantError(f"block {i}: node arrays must be sorted unique")
        if not np.all(np.isin(block.dst_nodes, block.src_nodes)):
            raise InvariantError(f"block {i}: dst nodes missing from src")
        if block.num_edges:
            if block.edge_src.max() >= len(block.src_nodes) or \
               block.edge_dst.max() >= len(block.dst_nodes):
                raise InvariantError(f"block {i}: edge index out of range")
            srcs = block.src_nodes[block.edge_src]
            dsts = block.dst_nodes[block.edge_dst]
            rows_g = np.repeat(np.arange(g.num_nodes, dtype=np.int64),
                               g.degrees)
            edge_keys = rows_g * g.num_nodes + g.indices
            query = srcs * g.num_nodes + dsts
            hit = np.searchsorted(edge_keys, query)
            ok = (hit < len(edge_keys)) & (edge_keys[np.minimum(hit, len(edge_keys) - 1)] == query)
            if not ok.all():
                j = int(np.flatnonzero(~ok)[0])
                raise InvariantError(
                    f"block {i}: ({int(srcs[j])}, {int(dsts[j])}) is not a "
                    f"graph edge")
            if not np.all(np.isfinite(block.edge_weight)) or \
               np.any(block.edge_weight <= 0):
                raise InvariantError(f"block {i}: edge weights must be finite > 0")
            if block.fanout is not None:
                indeg = np.bincount(block.edge_dst,
                                    minlength=len(block.dst_nodes))
                if indeg.max() > block.fanout:
                    raise InvariantError(
                        f"block {i}: fanout bound {block.fanout} exceeded")
        if not np.array_equal(block.dst_degree, g.degrees[block.dst_nodes]):
            raise InvariantError(f"block {i}: stale dst degrees")
        if i + 1 < len(mb.blocks):
            if not np.array_equal(block.dst_nodes, mb.blocks[i + 1].src_nodes):
                raise InvariantError(
                    f"block {i}: dst set does not chain into block {i + 1} src")
    if not np.array_equal(mb.targets, mb.blocks[-1].dst_nodes):
        raise InvariantError("targets must equal the last block's dst set")
    if not np.array_equal(mb.input_nodes, mb.blocks[0].src_nodes):
        raise InvariantError("input_nodes must equal the first block's src set")

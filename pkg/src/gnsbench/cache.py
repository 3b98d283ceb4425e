"""Node-cache sampling: probability vectors, weighted draws, and the
induced cached-neighbor subgraph used to restrict neighbor sampling.

Two cache distributions are supported: degree-proportional (good when most
nodes are training nodes) and an L-step random-walk spread from the
training set (good when the training set is a small fraction of the graph).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph, NodeSet, adjacency, gather_rows

# stream tag keeping resample draws disjoint from the main cache draw
_RESAMPLE = 12


def _seed_list(seed) -> list[int]:
    return [int(seed)] if np.isscalar(seed) else [int(s) for s in seed]


@dataclass(frozen=True, eq=False)
class ProbVector:
    """Non-negative per-node sampling weights, optionally normalized."""

    weights: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("probability weights must be finite and >= 0")
        if self.normalized and abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("normalized ProbVector must sum to 1")
        object.__setattr__(self, "weights", w)
        w.setflags(write=False)

    def __len__(self) -> int:
        return int(self.weights.shape[0])

    def normalize(self) -> "ProbVector":
        if self.normalized:
            return self
        total = self.weights.sum()
        if total <= 0:
            raise ValueError("cannot normalize an all-zero weight vector")
        return ProbVector(self.weights / total, normalized=True)


def degree_probs(g: Graph) -> ProbVector:
    """Degree-proportional cache distribution: p_i = deg(i) / sum_k deg(k)."""
    total = g.num_edges
    if total == 0:
        raise ValueError("graph has no edges; degree distribution undefined")
    return ProbVector(g.degrees / float(total), normalized=True)


def random_walk_probs(g: Graph, train: NodeSet, fanouts, num_layers: int) -> ProbVector:
    """L-step spread of the training-set indicator, renormalized.

    Starts from the uniform distribution over the training set and applies
    ``p <- D A p + p`` once per layer, where ``D`` scales node i by
    min(fanout, deg(i)) / deg(i) (the per-neighbor selection probability,
    clamped so a row never amplifies mass). ``fanouts`` is ordered output
    layer first; step ell uses fanouts[ell-1].
    """
    if num_layers < 1:
        raise ValueError("num_layers must be >= 1")
    if len(train) == 0:
        raise ValueError("training set is empty")
    if len(fanouts) < num_layers:
        raise ValueError("need one fanout per layer")
    adj = adjacency(g)
    deg = g.degrees.astype(np.float64)
    safe_deg = np.maximum(deg, 1.0)
    p = np.zeros(g.num_nodes, dtype=np.float64)
    p[train.ids] = 1.0 / len(train)
    for step in range(num_layers):
        d = np.minimum(float(fanouts[step]), deg) / safe_deg
        p = d * (adj @ p) + p
    return ProbVector(p / p.sum(), normalized=True)


def sample_cache(probs: ProbVector, cache_size: int, rng_seed) -> NodeSet:
    """Weighted sampling without replacement via exponential race keys.

    Returns min(cache_size, #positive-weight nodes) node ids; deterministic
    for a fixed seed.
    """
    w = probs.weights
    n = len(w)
    support = np.flatnonzero(w > 0)
    if cache_size <= 0:
        return NodeSet.from_ids([], n)
    if len(support) <= cache_size:
        return NodeSet.from_ids(support, n)
    rng = np.random.default_rng(rng_seed)
    keys = rng.exponential(size=len(support)) / w[support]
    pick = np.argpartition(keys, cache_size)[:cache_size]
    return NodeSet.from_ids(support[pick], n)


def inclusion_prob(p, cache_size: int):
    """Closed-form cache-inclusion probability 1 - (1 - p)^|C|.

    Treats the |C| draws as independent (with replacement); the actual
    cache is drawn without replacement, so this is the estimator the
    weighting scheme assumes rather than the exact probability. Accepts a
    scalar or an array.
    """
    p = np.clip(np.asarray(p, dtype=np.float64), 0.0, 1.0)
    out = -np.expm1(cache_size * np.log1p(-np.minimum(p, 1.0 - 1e-15)))
    out = np.where(p >= 1.0, 1.0 if cache_size >= 1 else 0.0, out)
    return float(out) if out.ndim == 0 else out


def empirical_inclusion(probs: ProbVector, cache_size: int,
                        resamples: int = 64, seed=0) -> np.ndarray:
    """Per-node cache-inclusion frequency over ``resamples`` fresh draws."""
    base = _seed_list(seed)
    counts = np.zeros(len(probs), dtype=np.float64)
    for r in range(resamples):
        counts[sample_cache(probs, cache_size, base + [_RESAMPLE, r]).ids] += 1
    return counts / resamples


@dataclass(frozen=True, eq=False)
class CacheState:
    """A sampled cache plus everything samplers need to exploit it.

    ``cached_indptr``/``cached_indices`` form a CSR over all nodes whose
    row v lists N(v) ∩ C, built in one pass over the cache rows' adjacency.
    Immutable; safe for concurrent reads.
    """

    nodes: NodeSet
    inclusion: np.ndarray
    cached_indptr: np.ndarray
    cached_indices: np.ndarray
    epoch: int
    source_probs: ProbVector

    def __post_init__(self):
        for arr in (self.inclusion, self.cached_indptr, self.cached_indices):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.nodes)

    def num_cached_neighbors(self, v: int) -> int:
        return int(self.cached_indptr[v + 1] - self.cached_indptr[v])

    def cached_neighbors(self, v: int) -> np.ndarray:
        return self.cached_indices[self.cached_indptr[v]:self.cached_indptr[v + 1]]


def build_cache(g: Graph, probs: ProbVector, cache_size: int, epoch: int = 0,
                rng_seed=0, inclusion_mode: str = "analytic",
                resamples: int = 64) -> CacheState:
    """Sample a cache and build its induced cached-neighbor subgraph.

    ``inclusion_mode`` selects the per-node inclusion probabilities stored on
    the state: "analytic" uses the closed form (with the forced case pinned
    to 1 when the cache covers the whole positive support), "empirical"
    estimates them from ``resamples`` independent cache draws (floored at
    1/(resamples+1) so nodes in the realized cache stay weightable).
    """
    probs = probs.normalize()
    nodes = sample_cache(probs, cache_size, rng_seed)
    support = probs.weights > 0
    if inclusion_mode == "analytic":
        incl = inclusion_prob(probs.weights, len(nodes))
        if len(nodes) >= int(support.sum()):
            incl = np.where(support, 1.0, incl)
    elif inclusion_mode == "empirical":
        incl = empirical_inclusion(probs, cache_size, resamples, seed=rng_seed)
        incl = incl.copy()
        incl[nodes.ids] = np.maximum(incl[nodes.ids], 1.0 / (resamples + 1))
    else:
        raise ValueError(f"unknown inclusion_mode {inclusion_mode!r}")

    # one pass over the cache nodes' adjacency: every neighbor u of a cache
    # node c contributes c to u's cached-neighbor list (adjacency is
    # symmetric, so N(u) ∩ C == {c in C : u in N(c)})
    neigh, counts, _ = gather_rows(g.indptr, g.indices, nodes.ids)
    owners = np.repeat(nodes.ids, counts)
    order = np.lexsort((owners, neigh))
    cached_indices = owners[order]
    cached_indptr = np.zeros(g.num_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(neigh, minlength=g.num_nodes), out=cached_indptr[1:])
    return CacheState(nodes=nodes, inclusion=incl,
                      cached_indptr=cached_indptr,
                      cached_indices=cached_indices, epoch=epoch,
                      source_probs=probs)


def write_cache_dump(cache: CacheState, path) -> None:
    """Debug export: '# epoch=<k> size=<n>' then one node id per line."""
    with open(path, "w") as f:
        f.write(f"# epoch={cache.epoch} size={len(cache)}\n")
        for v in cache.nodes.ids:
            f.write(f"{int(v)}\n")


def coverage(g: Graph, cache: CacheState, nodes: NodeSet) -> float:
    """Fraction of ``nodes`` with at least one cached neighbor."""
    if len(nodes) == 0:
        return 0.0
    counts = cache.cached_indptr[nodes.ids + 1] - cache.cached_indptr[nodes.ids]
    return float(np.mean(counts > 0))

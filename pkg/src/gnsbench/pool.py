"""Parallel mini-batch production.

Worker processes sample mini-batches independently and hand them to the
consumer over a bounded queue. Batch content is a pure function of
(config seed, epoch, batch index): the epoch's target partition comes from
a per-epoch shuffle stream and each batch gets its own generator, so any
assignment of batches to workers reproduces identical mini-batches. The
consumer re-orders arrivals by batch index.

The cache is rebuilt at epoch boundaries every ``cache_period`` epochs;
workers only ever see the current epoch's snapshot (they are forked after
the rebuild), which is the stop-the-world swap the trainer relies on.
"""

from __future__ import annotations

import multiprocessing as mp
import queue as queue_mod
import time
import traceback
from dataclasses import dataclass

import numpy as np

from . import cache as cache_mod
from .graph import Graph, train_set
from .sampling import MiniBatch, SamplerConfig, build_minibatch, \
    estimate_edge_inclusion

_SHUFFLE = 31
_BATCH = 32
_CACHE = 33
_TABLE = 34


@dataclass(frozen=True)
class BatchItem:
    epoch: int
    index: int
    minibatch: MiniBatch
    sample_ms: float


def cache_probs(g: Graph, config: SamplerConfig):
    """Pick the cache distribution per the configured mode.

    "auto" uses the degree distribution when at least half the nodes are
    training nodes and the random-walk spread otherwise.
    """
    mode = config.cache_mode
    ts = train_set(g)
    if mode == "auto":
        mode = "degree" if len(ts) * 2 >= g.num_nodes else "walk"
    if mode == "degree":
        return cache_mod.degree_probs(g)
    return cache_mod.random_walk_probs(g, ts, config.fanouts,
                                       config.num_layers)


def epoch_targets(g: Graph, config: SamplerConfig, epoch: int) -> list[np.ndarray]:
    """Shuffled train-node partition for one epoch, one array per batch."""
    ids = train_set(g).ids
    rng = np.random.default_rng([config.seed, _SHUFFLE, epoch])
    shuffled = rng.permutation(ids)
    return [shuffled[i:i + config.batch_size]
            for i in range(0, len(shuffled), config.batch_size)]


def _build_one(g, config, cache, tables, epoch, index, targets) -> BatchItem:
    rng = np.random.default_rng([config.seed, _BATCH, epoch, index])
    t0 = time.perf_counter()
    mb = build_minibatch(g, cache, targets, config, rng, exact_tables=tables)
    return BatchItem(epoch=epoch, index=index, minibatch=mb,
                     sample_ms=(time.perf_counter() - t0) * 1000.0)


def _worker(out_queue, worker_id, num_workers, g, config, cache, tables,
            epoch, batches):
    try:
        for index in range(worker_id, len(batches), num_workers):
            out_queue.put(_build_one(g, config, cache, tables, epoch, index,
                                     batches[index]))
        out_queue.put(("done", worker_id))
    except BaseException:
        out_queue.put(("error", traceback.format_exc()))


class SamplerPool:
    """Produces one epoch of mini-batches at a time, optionally in parallel.

    ``num_workers == 1`` runs in-process; more workers fork one process per
    worker for the epoch (read-only graph and cache are shared by fork).
    """

    def __init__(self, g: Graph, config: SamplerConfig, num_workers: int = 1,
                 queue_capacity: int = 8):
        if num_workers < 1:
            raise ValueError("num_workers must be >= 1")
        if queue_capacity < 1:
            raise ValueError("queue_capacity must be >= 1")
        self.graph = g
        self.config = config
        self.num_workers = num_workers
        self.queue_capacity = queue_capacity
        self.cache = None
        self._probs = None
        self._tables = None

    def _refresh_cache(self, epoch: int) -> None:
        if self.config.strategy != "GNS":
            return
        if self._probs is None:
            self._probs = cache_probs(self.graph, self.config)
        cache_size = int(round(self.config.cache_frac * self.graph.num_nodes))
        self.cache = cache_mod.build_cache(
            self.graph, self._probs, cache_size, epoch=epoch,
            rng_seed=[self.config.seed, _CACHE, epoch])
        if self.config.weight_policy == "gns-exact" and self._tables is None:
            L = self.config.num_layers
            self._tables = {}
            for layer in range(L, 0, -1):
                k = self.config.fanouts[L - layer]
                cache_only = self.config.input_layer_cache_only and layer == 1
                key = (k, cache_only)
                if key not in self._tables:
                    self._tables[key] = estimate_edge_inclusion(
                        self.graph, self._probs, cache_size, k, cache_only,
                        resamples=self.config.exact_resamples,
                        seed=[self.config.seed, _TABLE])

    def iter_epoch(self, epoch: int):
        """Yield this epoch's BatchItems in batch-index order."""
        if self.config.strategy == "GNS" and \
                (self.cache is None or epoch % self.config.cache_period == 0):
            self._refresh_cache(epoch)
        batches = epoch_targets(self.graph, self.config, epoch)
        if self.num_workers == 1:
            for index, targets in enumerate(batches):
                yield _build_one(self.graph, self.config, self.cache,
                                 self._tables, epoch, index, targets)
            return
        yield from self._iter_parallel(epoch, batches)

    def _iter_parallel(self, epoch: int, batches):
        ctx = mp.get_context("fork")
        queue = ctx.Queue(maxsize=self.queue_capacity)
        workers = [
            ctx.Process(
                target=_worker,
                args=(queue, w, self.num_workers, self.graph, self.config,
                      self.cache, self._tables, epoch, batches),
                daemon=True)
            for w in range(self.num_workers)
        ]
        for p in workers:
            p.start()
        pending = len(batches)
        done = 0
        buffered: dict[int, BatchItem] = {}
        next_index = 0
        try:
            while pending > 0:
                try:
                    item = queue.get(timeout=1.0)
                except queue_mod.Empty:
                    if any(not p.is_alive() and p.exitcode not in (0, None)
                           for p in workers):
                        raise RuntimeError(
                            "sampler worker died unexpectedly") from None
                    if done == len(workers):
                        raise RuntimeError(
                            "sampler pool lost a batch: all workers done "
                            f"with {pending} batches outstanding")
                    continue
                if isinstance(item, tuple):
                    kind, payload = item
                    if kind == "error":
                        raise RuntimeError(
                            f"sampler worker failed:\n{payload}")
                    done += 1
                    continue
                buffered[item.index] = item
                while next_index in buffered:
                    yield buffered.pop(next_index)
                    pending -= 1
                    next_index += 1
        finally:
            for p in workers:
                if p.is_alive():
                    p.terminate()
            for p in workers:
                p.join()
            queue.close()

    def run(self, epochs: int):
        """Yield BatchItems across ``epochs`` epochs with periodic cache refresh."""
        for epoch in range(epochs):
            yield from self.iter_epoch(epoch)

"""Per-batch instrumentation and the benchmark harness.

The hardware-dependent cost the cache removes is data movement, so it is
modeled as bytes: every uncached input node's feature row must be copied
(4 bytes per float32 element), cached nodes are free. Per-batch stats go to
one CSV per run plus a sensitivity-grid CSV over (cache fraction, update
period) for the cache-bearing runs.

Batch CSV columns (normative order):
    run_id, epoch, batch, strategy, num_input, num_cached, copy_bytes,
    isolated_frac, sample_ms, train_ms
Grid CSV columns: cache_frac, period_P, test_f1, mean_input, mean_cached
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cache import CacheState
from .sampling import MiniBatch, SamplerConfig, isolated_fraction

BATCH_CSV_COLUMNS = ["run_id", "epoch", "batch", "strategy", "num_input",
                     "num_cached", "copy_bytes", "isolated_frac",
                     "sample_ms", "train_ms"]
GRID_CSV_COLUMNS = ["cache_frac", "period_P", "test_f1", "mean_input",
                    "mean_cached"]


@dataclass
class BatchStats:
    epoch: int
    batch: int
    num_input: int
    num_cached: int
    copy_bytes: int
    isolated_frac: float
    sample_ms: float
    train_ms: float


@dataclass
class MetricsReport:
    run_id: str
    strategy: str
    config: SamplerConfig
    seed: int
    stats: list[BatchStats] = field(default_factory=list)
    test_f1: float = 0.0

    def aggregate(self, attr: str) -> dict[str, float]:
        """mean/stdev/p50/p95 of one stat, recomputed from the stream."""
        values = np.array([getattr(s, attr) for s in self.stats], dtype=float)
        if len(values) == 0:
            return {"mean": 0.0, "stdev": 0.0, "p50": 0.0, "p95": 0.0}
        return {"mean": float(values.mean()),
                "stdev": float(values.std()),
                "p50": float(np.percentile(values, 50)),
                "p95": float(np.percentile(values, 95))}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(BATCH_CSV_COLUMNS)
            for s in self.stats:
                w.writerow([self.run_id, s.epoch, s.batch, self.strategy,
                            s.num_input, s.num_cached, s.copy_bytes,
                            f"{s.isolated_frac:.4f}",
                            int(round(s.sample_ms)), int(round(s.train_ms))])


def count_input_nodes(mb: MiniBatch, cache: CacheState | None):
    """(total input nodes, input nodes already resident in the cache)."""
    total = int(len(mb.input_nodes))
    if cache is None:
        return total, 0
    return total, int(cache.nodes.mask[mb.input_nodes].sum())


def copy_cost(mb: MiniBatch, cache: CacheState | None, feature_dim: int) -> int:
    """Bytes of feature data a mixed CPU-GPU step would have to move."""
    total, cached = count_input_nodes(mb, cache)
    return (total - cached) * feature_dim * 4


def batch_stats(mb: MiniBatch, cache: CacheState | None, feature_dim: int,
                epoch: int = 0, batch: int = 0, sample_ms: float = 0.0,
                train_ms: float = 0.0) -> BatchStats:
    total, cached = count_input_nodes(mb, cache)
    return BatchStats(epoch=epoch, batch=batch, num_input=total,
                      num_cached=cached,
                      copy_bytes=copy_cost(mb, cache, feature_dim),
                      isolated_frac=isolated_fraction(mb),
                      sample_ms=sample_ms, train_ms=train_ms)


def run_id_for(index: int, config: SamplerConfig) -> str:
    base = f"{index:02d}_{config.strategy.lower()}"
    if config.strategy == "GNS":
        return f"{base}_c{config.cache_frac:g}_p{config.cache_period}"
    if config.strategy == "LADIES":
        return f"{base}_s{config.layer_size}"
    return base


def run_benchmark(g, configs: list[SamplerConfig], train_config, out_dir,
                  num_workers: int = 1) -> list[MetricsReport]:
    """Train once per config, writing one batch CSV each plus the grid CSV.

    Deterministic given the configs' seeds (timing columns excepted).
    """
    from .model import train  # deferred: model depends on sampling, not on us

    if not configs:
        return []
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    feature_dim = g.feature_dim if g.feature_dim else 100
    reports = []
    for i, config in enumerate(configs):
        rid = run_id_for(i, config)
        report = MetricsReport(run_id=rid, strategy=config.strategy,
                               config=config, seed=config.seed)

        def hook(epoch, index, mb, cache, sample_ms, train_ms,
                 _report=report):
            _report.stats.append(batch_stats(
                mb, cache, feature_dim, epoch=epoch, batch=index,
                sample_ms=sample_ms, train_ms=train_ms))

        train_report = train(g, config, train_config,
                             num_workers=num_workers, batch_hook=hook)
        report.test_f1 = train_report.final_test_f1
        report.write_csv(out_dir / f"{rid}.csv")
        reports.append(report)

    with open(out_dir / "grid.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(GRID_CSV_COLUMNS)
        for report in reports:
            if report.strategy != "GNS":
                continue
            w.writerow([f"{report.config.cache_frac:g}",
                        report.config.cache_period,
                        f"{report.test_f1:.4f}",
                        f"{report.aggregate('num_input')['mean']:.1f}",
                        f"{report.aggregate('num_cached')['mean']:.1f}"])
    return reports

"""Command-line entry point.

Subcommands: gen, cache, train, bench, report. Global flags --seed,
--workers, --out, --config are accepted by every subcommand; --config names
a flat key=value file (one per line, '#' comments) whose entries fill in
any flag not given on the command line. Unknown config keys are rejected
before any work starts.

Exit codes: 0 ok, 1 usage error, 2 I/O error, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import cache as cache_mod
from . import graph as graph_mod
from . import metrics as metrics_mod
from . import model as model_mod
from .graph import GraphFormatError, InvariantError
from .pool import cache_probs
from .sampling import SamplerConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_INVARIANT = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_bool(text: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}")


def load_config_file(path) -> dict[str, str]:
    """Flat key=value config; '#' starts a comment, blank lines ignored."""
    values = {}
    try:
        with open(path) as f:
            for lineno, line in enumerate(f, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(
                        f"{path}:{lineno}: expected key=value, got {line!r}")
                key, _, value = line.partition("=")
                values[key.strip()] = value.strip()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}")
    return values


def _resolve(args, specs: dict):
    """Merge CLI flags over config-file values over defaults."""
    cfg = load_config_file(args.config) if args.config else {}
    unknown = set(cfg) - set(specs)
    if unknown:
        raise UsageError(
            f"unknown config keys: {', '.join(sorted(unknown))}")
    resolved = {}
    for key, (convert, default) in specs.items():
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
        elif key in cfg:
            try:
                resolved[key] = convert(cfg[key])
            except (ValueError, TypeError):
                raise UsageError(f"bad config value for {key}: {cfg[key]!r}")
        else:
            resolved[key] = default
    return resolved


def _load_graph(path) -> graph_mod.Graph:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"graph file not found: {path}")
    if p.suffix in (".txt", ".edges", ".el"):
        return graph_mod.load_edgelist(p)
    return graph_mod.load_binary(p)


def _out_dir(resolved) -> Path:
    out = Path(resolved["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


_GLOBAL_SPECS = {
    "seed": (int, 0),
    "workers": (int, 1),
    "out": (str, "out"),
    "validate": (_parse_bool, False),
}


def _add_global_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="RNG seed (u64)")
    p.add_argument("--workers", type=int, default=None,
                   help="sampler worker processes")
    p.add_argument("--out", type=str, default=None, help="output directory")
    p.add_argument("--config", type=str, default=None,
                   help="key=value config file; flags override it")
    p.add_argument("--validate", action="store_const", const=True,
                   default=None,
                   help="run the structural invariant checks while working")


def cmd_gen(args) -> int:
    specs = dict(_GLOBAL_SPECS)
    specs.update({
        "n": (int, 1000),
        "attach": (int, 5),
        "blocks": (int, 4),
        "p_in": (float, 0.02),
        "p_out": (float, 0.002),
        "feature_dim": (int, 16),
        "feature_noise": (float, 3.0),
        "name": (str, ""),
    })
    r = _resolve(args, specs)
    try:
        if args.kind == "powerlaw":
            g = graph_mod.generate_powerlaw(r["n"], r["attach"], r["seed"])
        else:
            g = graph_mod.generate_sbm(r["n"], r["blocks"], r["p_in"],
                                       r["p_out"], r["seed"],
                                       feature_dim=r["feature_dim"],
                                       feature_noise=r["feature_noise"])
    except ValueError as exc:
        raise UsageError(str(exc))
    out = _out_dir(r) / (r["name"] or f"{args.kind}.gnsg")
    graph_mod.save_binary(g, out)
    avg_deg = g.num_edges / g.num_nodes if g.num_nodes else 0.0
    print(f"wrote {out}: nodes={g.num_nodes} edges={g.num_edges // 2} "
          f"avg_degree={avg_deg:.2f}")
    return EXIT_OK


def cmd_cache(args) -> int:
    specs = dict(_GLOBAL_SPECS)
    specs.update({
        "mode": (str, "degree"),
        "size_frac": (float, 0.01),
        "fanouts": (_int_list, (15, 10, 5)),
    })
    r = _resolve(args, specs)
    if r["mode"] not in ("degree", "walk", "auto"):
        raise UsageError(f"--mode must be degree|walk|auto, got {r['mode']!r}")
    if not (0.0 <= r["size_frac"] <= 1.0):
        raise UsageError("--size-frac must be in [0, 1]")
    g = _load_graph(args.graph)
    if r["validate"]:
        graph_mod.validate_graph(g)
    config = SamplerConfig(strategy="GNS", fanouts=tuple(r["fanouts"]),
                           cache_mode=r["mode"], seed=r["seed"],
                           cache_frac=max(r["size_frac"], 1e-12))
    probs = cache_probs(g, config)
    cache_size = int(round(r["size_frac"] * g.num_nodes))
    cache = cache_mod.build_cache(g, probs, cache_size, epoch=0,
                                  rng_seed=[r["seed"], 33, 0])
    out = _out_dir(r) / "cache.txt"
    cache_mod.write_cache_dump(cache, out)
    cov = cache_mod.coverage(g, cache, graph_mod.train_set(g))
    print(f"wrote {out}: cache_size={len(cache)} coverage={cov:.4f}")
    return EXIT_OK


_SAMPLER_SPECS = {
    "strategy": (str, "ns"),
    "fanouts": (_int_list, (15, 10, 5)),
    "layer_size": (int, 512),
    "cache_frac": (float, 0.01),
    "period": (int, 1),
    "cache_mode": (str, "auto"),
    "cache_only_input": (_parse_bool, True),
    "weight_policy": (str, ""),
    "batch_size": (int, 100),
}
_TRAIN_SPECS = {
    "epochs": (int, 10),
    "lr": (float, 0.003),
    "hidden": (int, 64),
}


def _sampler_config(r) -> SamplerConfig:
    strategy = r["strategy"].upper()
    if strategy not in ("NS", "GNS", "LADIES"):
        raise UsageError(f"--strategy must be ns|gns|ladies, got {r['strategy']!r}")
    try:
        return SamplerConfig(
            strategy=strategy, fanouts=tuple(r["fanouts"]),
            layer_size=r["layer_size"], cache_frac=r["cache_frac"],
            cache_period=r["period"], cache_mode=r["cache_mode"],
            input_layer_cache_only=r["cache_only_input"],
            batch_size=r["batch_size"], seed=r["seed"],
            weight_policy=r["weight_policy"])
    except ValueError as exc:
        raise UsageError(str(exc))


def cmd_train(args) -> int:
    specs = dict(_GLOBAL_SPECS)
    specs.update(_SAMPLER_SPECS)
    specs.update(_TRAIN_SPECS)
    r = _resolve(args, specs)
    g = _load_graph(args.graph)
    if r["validate"]:
        graph_mod.validate_graph(g)
    sconfig = _sampler_config(r)
    hook = None
    if r["validate"]:
        from .sampling import validate_minibatch

        def hook(epoch, index, mb, cache, sample_ms, train_ms):
            if epoch == 0 and index == 0:
                validate_minibatch(g, mb)
    try:
        tconfig = model_mod.TrainConfig(epochs=r["epochs"], lr=r["lr"],
                                        batch_size=r["batch_size"],
                                        hidden_dim=r["hidden"], seed=r["seed"])
        report = model_mod.train(g, sconfig, tconfig,
                                 num_workers=r["workers"], batch_hook=hook)
    except ValueError as exc:
        raise UsageError(str(exc))
    out = _out_dir(r)
    report.write_csv(out / "train_report.csv")
    model_mod.save_checkpoint(report.params, out / "checkpoint.gnsw")
    print(f"wrote {out / 'train_report.csv'} and {out / 'checkpoint.gnsw'}: "
          f"test_f1={report.final_test_f1:.4f}")
    return EXIT_OK


_BENCH_SPECS = {
    "strategies": (lambda s: tuple(t.strip().lower() for t in s.split(",")
                                   if t.strip()), ("ns", "gns")),
    "fanouts": (_int_list, (15, 10, 5)),
    "gns_fanouts": (_int_list, ()),
    "layer_sizes": (_int_list, (512,)),
    "cache_fracs": (_float_list, (0.01,)),
    "periods": (_int_list, (1,)),
    "cache_mode": (str, "auto"),
    "cache_only_input": (_parse_bool, True),
    "weight_policy": (str, ""),
    "batch_size": (int, 100),
}


def bench_configs(r) -> list[SamplerConfig]:
    """Expand a bench spec into concrete sampler configs.

    One NS config, one GNS config per (cache_frac, period) pair, one LADIES
    config per layer size — in that order.
    """
    configs = []
    for strategy in r["strategies"]:
        if strategy == "ns":
            configs.append(SamplerConfig(
                strategy="NS", fanouts=tuple(r["fanouts"]),
                batch_size=r["batch_size"], seed=r["seed"]))
        elif strategy == "gns":
            fanouts = tuple(r["gns_fanouts"]) or tuple(r["fanouts"])
            for frac in r["cache_fracs"]:
                for period in r["periods"]:
                    configs.append(SamplerConfig(
                        strategy="GNS", fanouts=fanouts, cache_frac=frac,
                        cache_period=period, cache_mode=r["cache_mode"],
                        input_layer_cache_only=r["cache_only_input"],
                        weight_policy=r["weight_policy"],
                        batch_size=r["batch_size"], seed=r["seed"]))
        elif strategy == "ladies":
            for size in r["layer_sizes"]:
                configs.append(SamplerConfig(
                    strategy="LADIES", fanouts=tuple(r["fanouts"]),
                    layer_size=size, batch_size=r["batch_size"],
                    seed=r["seed"]))
        else:
            raise UsageError(f"unknown strategy in config: {strategy!r}")
    return configs


def cmd_bench(args) -> int:
    specs = dict(_GLOBAL_SPECS)
    specs.update(_BENCH_SPECS)
    specs.update(_TRAIN_SPECS)
    r = _resolve(args, specs)
    g = _load_graph(args.graph)
    if r["validate"]:
        graph_mod.validate_graph(g)
    try:
        configs = bench_configs(r)
        tconfig = model_mod.TrainConfig(epochs=r["epochs"], lr=r["lr"],
                                        batch_size=r["batch_size"],
                                        hidden_dim=r["hidden"], seed=r["seed"])
        out = _out_dir(r)
        reports = metrics_mod.run_benchmark(g, configs, tconfig, out,
                                            num_workers=r["workers"])
    except ValueError as exc:
        raise UsageError(str(exc))
    print(f"wrote {len(reports)} run CSVs and grid.csv to {out}")
    return EXIT_OK


def _read_csv_rows(path):
    import csv as csv_lib
    with open(path, newline="") as f:
        return list(csv_lib.DictReader(f))


def _print_table(headers, rows):
    widths = [max(len(h), *(len(str(r[i])) for r in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    line = "  ".join(h.ljust(w) for h, w in zip(headers, widths))
    print(line)
    print("-" * len(line))
    for r in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(r, widths)))


def cmd_report(args) -> int:
    in_dir = Path(args.dir)
    if not in_dir.is_dir():
        raise FileNotFoundError(f"not a directory: {in_dir}")
    run_files = sorted(p for p in in_dir.glob("*.csv")
                       if p.name not in ("grid.csv", "combined.csv",
                                         "train_report.csv"))
    summaries = []
    for path in run_files:
        rows = _read_csv_rows(path)
        if not rows or "num_input" not in rows[0]:
            continue
        num_input = np.array([float(r["num_input"]) for r in rows])
        num_cached = np.array([float(r["num_cached"]) for r in rows])
        copy_bytes = np.array([float(r["copy_bytes"]) for r in rows])
        isolated = np.array([float(r["isolated_frac"]) for r in rows])
        summaries.append({
            "run_id": rows[0]["run_id"],
            "strategy": rows[0]["strategy"],
            "batches": len(rows),
            "mean_input": num_input.mean(),
            "mean_cached": num_cached.mean(),
            "mean_copy_bytes": copy_bytes.mean(),
            "mean_isolated": isolated.mean(),
        })
    if summaries:
        print("per-run summary")
        _print_table(
            ["run_id", "strategy", "batches", "mean_input", "mean_cached",
             "mean_copy_bytes", "mean_isolated"],
            [[s["run_id"], s["strategy"], s["batches"],
              f"{s['mean_input']:.1f}", f"{s['mean_cached']:.1f}",
              f"{s['mean_copy_bytes']:.0f}", f"{s['mean_isolated']:.4f}"]
             for s in summaries])
        ns = [s for s in summaries if s["strategy"] == "NS"]
        gns = [s for s in summaries if s["strategy"] == "GNS"]
        if ns and gns:
            ratio = (np.mean([s["mean_input"] for s in ns])
                     / max(np.mean([s["mean_input"] for s in gns]), 1e-9))
            print(f"input-node ratio NS/GNS: {ratio:.2f}")

    grid_path = in_dir / "grid.csv"
    if grid_path.exists():
        rows = _read_csv_rows(grid_path)
        if rows:
            periods = sorted({int(r["period_P"]) for r in rows})
            fracs = sorted({float(r["cache_frac"]) for r in rows},
                           reverse=True)
            cells = {(float(r["cache_frac"]), int(r["period_P"])):
                     r["test_f1"] for r in rows}
            print("\ntest F1 by cache size and update period")
            _print_table(
                ["cache_frac"] + [f"P={p}" for p in periods],
                [[f"{frac:g}"] + [cells.get((frac, p), "-") for p in periods]
                 for frac in fracs])

    if summaries:
        import csv as csv_lib
        with open(in_dir / "combined.csv", "w", newline="") as f:
            w = csv_lib.writer(f)
            w.writerow(["run_id", "strategy", "batches", "mean_input",
                        "mean_cached", "mean_copy_bytes", "mean_isolated"])
            for s in summaries:
                w.writerow([s["run_id"], s["strategy"], s["batches"],
                            f"{s['mean_input']:.1f}",
                            f"{s['mean_cached']:.1f}",
                            f"{s['mean_copy_bytes']:.0f}",
                            f"{s['mean_isolated']:.4f}"])
        print(f"\nwrote {in_dir / 'combined.csv'}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="gnsbench",
                     description="graph minibatch sampling benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic graph")
    p.add_argument("kind", choices=["powerlaw", "sbm"])
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--attach", type=int, default=None)
    p.add_argument("--blocks", type=int, default=None)
    p.add_argument("--p-in", dest="p_in", type=float, default=None)
    p.add_argument("--p-out", dest="p_out", type=float, default=None)
    p.add_argument("--feature-dim", dest="feature_dim", type=int, default=None)
    p.add_argument("--feature-noise", dest="feature_noise", type=float,
                   default=None)
    p.add_argument("--name", type=str, default=None,
                   help="output file name inside --out")
    _add_global_flags(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("cache", help="build and dump a node cache")
    p.add_argument("graph")
    p.add_argument("--mode", type=str, default=None,
                   help="degree|walk|auto")
    p.add_argument("--size-frac", dest="size_frac", type=float, default=None)
    p.add_argument("--fanouts", type=_int_list, default=None)
    _add_global_flags(p)
    p.set_defaults(func=cmd_cache)

    def add_sampler_flags(p):
        p.add_argument("--strategy", type=str, default=None,
                       help="ns|gns|ladies")
        p.add_argument("--fanouts", type=_int_list, default=None,
                       help="per-layer fanouts, output layer first")
        p.add_argument("--layer-size", dest="layer_size", type=int,
                       default=None)
        p.add_argument("--cache-frac", dest="cache_frac", type=float,
                       default=None)
        p.add_argument("--period", type=int, default=None,
                       help="cache update period in epochs")
        p.add_argument("--cache-mode", dest="cache_mode", type=str,
                       default=None)
        p.add_argument("--cache-only-input", dest="cache_only_input",
                       type=_parse_bool, default=None)
        p.add_argument("--weight-policy", dest="weight_policy", type=str,
                       default=None)
        p.add_argument("--batch-size", dest="batch_size", type=int,
                       default=None)

    def add_train_flags(p):
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--hidden", type=int, default=None)

    p = sub.add_parser("train", help="train the reference model")
    p.add_argument("graph")
    add_sampler_flags(p)
    add_train_flags(p)
    _add_global_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="run a benchmark config matrix")
    p.add_argument("graph")
    add_train_flags(p)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    _add_global_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="summarize benchmark CSVs")
    p.add_argument("dir")
    _add_global_flags(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, GraphFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvariantError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())

"""Command-line surface: gen, select, loop, stats, bench, report.

Exit codes: 0 success, 2 usage or config error, 3 data or schema error,
4 runtime failure. Every randomized path draws from one generator seeded by
--seed (or the config file's seed), so repeating a command reproduces its
outputs byte for byte.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bench import bench_csv_text, bench_strategy, fit_growth_exponent
from .config import (
    Strategy,
    StrategyConfig,
    load_config_file,
    strategy_config_from_values,
)
from .errors import (
    BoxalError,
    ConfigError,
    DegeneratePoolError,
    IntegrityError,
    PoolParseError,
    PoolSchemaError,
)
from .gradients import pool_embeddings
from .label_scoring import score_pool
from .loop import manifest_json, metrics_csv_text, run_loop
from .medoids import k_medoids, pairwise_distances
from .parallel import resolve_threads
from .records import iter_pool_file, parse_pool, write_pool, write_selection
from .selection import select_round, validate_pool_for_strategy
from .synthetic import (
    default_scene_spec,
    generate_pool,
    scene_spec_from_obj,
    state_from_obj,
    state_to_obj,
)

USAGE_EXIT = 2
DATA_EXIT = 3
RUNTIME_EXIT = 4


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _parse_abundance(text: str | None, num_classes: int):
    if text is None:
        return None
    parts = tuple(float(v) for v in text.split(","))
    if len(parts) != num_classes:
        raise ConfigError(f"abundance needs {num_classes} comma-separated weights")
    return parts


def _load_scene_spec(args, num_classes: int):
    if getattr(args, "spec", None):
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec = scene_spec_from_obj(json.load(fh))
        if spec.num_classes != num_classes:
            raise ConfigError(
                f"scene spec has {spec.num_classes} classes but --classes is {num_classes}"
            )
        return spec
    return default_scene_spec(
        num_classes,
        abundance=_parse_abundance(getattr(args, "abundance", None), num_classes),
        boxes_mean=getattr(args, "boxes_mean", 2.5),
    )


def _read_pool(path, num_classes=None, mc_pass_count=None):
    return parse_pool(
        iter_pool_file(path), num_classes=num_classes, mc_pass_count=mc_pass_count
    )


def cmd_gen(args) -> int:
    spec = _load_scene_spec(args, args.classes)
    cfg = StrategyConfig(
        num_classes=args.classes, k1=1, k2=1, nr=1, seed=args.seed,
        mc_passes=args.m, dropout_rate=args.dropout,
    )
    state, records = generate_pool(args.n, spec, args.seed, cfg)
    out = Path(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        count = write_pool(records, fh)
    scenes_path = Path(args.scenes_out) if args.scenes_out else out.with_suffix(".scenes.json")
    with open(scenes_path, "w", encoding="utf-8") as fh:
        json.dump(state_to_obj(state), fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    total_boxes = sum(r.n_boxes for r in records)
    print(f"wrote {count} records ({total_boxes} boxes, {args.classes} classes) to {out}")
    print(f"wrote scenes to {scenes_path}")
    return 0


def _select_config(args) -> StrategyConfig:
    strategy = Strategy(args.strategy)
    k1 = args.k1
    k2 = args.k2
    if strategy == Strategy.CRB:
        if k1 is None or k2 is None:
            raise ConfigError("strategy crb requires --k1 and --k2")
    else:
        k1 = k1 if k1 is not None else args.nr
        k2 = k2 if k2 is not None else args.nr
    return StrategyConfig(
        num_classes=args.classes,
        k1=k1,
        k2=k2,
        nr=args.nr,
        bandwidth=args.h,
        mc_passes=args.m,
        grid_size=args.grid_size,
        seed=args.seed,
        strategy=strategy,
    )


def cmd_select(args) -> int:
    cfg = _select_config(args)
    records = _read_pool(args.pool, num_classes=cfg.num_classes,
                         mc_pass_count=cfg.mc_passes)
    validate_pool_for_strategy(records, cfg.strategy)
    result = select_round(
        records,
        cfg,
        rng=np.random.default_rng(cfg.seed),
        threads=resolve_threads(args.threads),
    )
    diagnostics = dict(result.round.diagnostics)
    s1, s2, s3 = result.stage_seconds
    scale = 1000.0 if args.timing == "wall" else 0.0
    diagnostics["stage1_ms"] = s1 * scale
    diagnostics["stage2_ms"] = s2 * scale
    diagnostics["stage3_ms"] = s3 * scale
    rnd = replace(result.round, diagnostics=diagnostics)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(write_selection(rnd))
    sizes = rnd.stage_sizes
    print(
        f"selected {len(rnd.selected_ids)} of {len(records)} clouds "
        f"(stage sizes {sizes[0]} >= {sizes[1]} >= {sizes[2]}) -> {args.out}"
    )
    return 0


def cmd_loop(args) -> int:
    values = load_config_file(args.config)
    cfg = strategy_config_from_values(
        values,
        seed=args.seed,
        strategy=Strategy(args.strategy) if args.strategy else None,
    )
    out_dir = Path(args.out_dir or values.get("out_dir", "run_out"))
    out_dir.mkdir(parents=True, exist_ok=True)

    if "pool" in values and "scenes" in values:
        with open(values["scenes"], "r", encoding="utf-8") as fh:
            state = state_from_obj(json.load(fh))
        records = _read_pool(values["pool"], num_classes=cfg.num_classes,
                             mc_pass_count=cfg.mc_passes)
        if len(records) != len(state.scenes):
            raise PoolSchemaError(
                f"pool has {len(records)} records but scenes file has {len(state.scenes)}"
            )
    elif "n" in values:
        spec = default_scene_spec(
            cfg.num_classes,
            abundance=_parse_abundance(values.get("abundance"), cfg.num_classes),
            boxes_mean=float(values.get("boxes_mean", 2.5)),
        )
        state, _ = generate_pool(int(values["n"]), spec, cfg.seed, cfg)
    else:
        raise ConfigError("loop config needs either 'n' or both 'pool' and 'scenes'")

    budget = values.get("budget_boxes")
    budget_boxes = math.inf if budget in (None, "inf") else float(budget)
    init_labeled = int(values["init_labeled"]) if "init_labeled" in values else None
    timing_mode = values.get("timing_mode", "none")
    threads = resolve_threads(int(values["threads"]) if "threads" in values else args.threads)

    result = run_loop(
        cfg,
        state,
        budget_boxes=budget_boxes,
        init_labeled=init_labeled,
        timing_mode=timing_mode,
        threads=threads,
    )
    (out_dir / "manifest.json").write_text(manifest_json(result.manifest), encoding="utf-8")
    (out_dir / "metrics.csv").write_text(metrics_csv_text(result.metrics_rows), encoding="utf-8")
    for rnd in result.rounds:
        path = out_dir / f"round_{rnd.round_index:03d}.json"
        path.write_text(write_selection(rnd), encoding="utf-8")
    stopped = result.manifest["early_stop"]
    status = f"early stop: {stopped['reason']}" if stopped else "completed"
    print(
        f"{len(result.rounds)} rounds ({status}), "
        f"{result.manifest['budget']['spent']} boxes annotated -> {out_dir}"
    )
    return 0


def cmd_stats(args) -> int:
    records = _read_pool(args.pool, num_classes=args.classes)
    scores = score_pool(records, args.classes, threads=resolve_threads(args.threads))
    by_id = {r.cloud_id: r for r in records}
    lines = ["cloud_id,entropy,n_boxes"]
    for s in scores:
        lines.append(f"{s.cloud_id},{s.entropy!r},{by_id[s.cloud_id].n_boxes}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote entropy stats for {len(scores)} clouds to {args.out}")
    else:
        sys.stdout.write(text)

    if args.distances_out or args.medoids_out:
        validate_pool_for_strategy(records, Strategy.CRB)
        ids = [r.cloud_id for r in records]
        dist = pairwise_distances(pool_embeddings(records))
        if args.distances_out:
            rows = [",".join(["cloud_id"] + ids)]
            for i, cid in enumerate(ids):
                rows.append(",".join([cid] + [repr(v) for v in dist[i]]))
            Path(args.distances_out).write_text("\n".join(rows) + "\n", encoding="utf-8")
        if args.medoids_out:
            if args.k2 is None:
                raise ConfigError("--medoids-out requires --k2")
            result = k_medoids(ids, dist, args.k2, seed=args.seed)
            rows = ["medoid_index,cloud_id"]
            rows += [f"{i},{cid}" for i, cid in enumerate(result.medoid_ids)]
            Path(args.medoids_out).write_text("\n".join(rows) + "\n", encoding="utf-8")

    if args.greedy_out:
        if args.k1 is None or args.k2 is None or args.nr is None:
            raise ConfigError("--greedy-out requires --k1, --k2, and --nr")
        cfg = StrategyConfig(
            num_classes=args.classes, k1=args.k1, k2=args.k2, nr=args.nr,
            bandwidth=args.h, seed=args.seed,
        )
        validate_pool_for_strategy(records, Strategy.CRB)
        result = select_round(records, cfg, rng=np.random.default_rng(cfg.seed))
        rows = ["step,chosen_id,objective,class_id,d,d_bar"]
        for step in result.greedy_steps:
            for c in range(args.classes):
                d = step.per_class_kl[c]
                dbar = step.per_class_norm[c]
                if math.isnan(d):
                    continue
                rows.append(
                    f"{step.step_index},{step.chosen_id},{step.objective!r},{c},{d!r},{dbar!r}"
                )
        Path(args.greedy_out).write_text("\n".join(rows) + "\n", encoding="utf-8")
    return 0


def cmd_bench(args) -> int:
    sizes = [int(v) for v in args.sizes.split(",")]
    strategy = Strategy(args.strategy)
    rows = bench_strategy(
        sizes, strategy, args.seed, nr=args.nr, repeats=args.repeats
    )
    slope = fit_growth_exponent(rows)
    text = bench_csv_text(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {len(rows)} timings to {args.out}")
    else:
        sys.stdout.write(text)
    for row in rows:
        print(f"n={row['n']}: {row['seconds'] * 1000.0:.2f} ms")
    print(f"fitted growth exponent: {slope:.3f}")
    return 0


def cmd_report(args) -> int:
    from .reporting import render_bench_figure, render_metrics_figures

    out_dir = Path(args.out_dir)
    written = []
    if args.metrics:
        written += render_metrics_figures([Path(p) for p in args.metrics], out_dir)
    if args.bench:
        written.append(render_bench_figure(Path(args.bench), out_dir))
    if not written:
        raise ConfigError("report needs --metrics and/or --bench inputs")
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boxal",
        description="Box-budget active learning selection engine for 3D-detection pools.",
    )
    parser.add_argument("--version", action="version", version=f"boxal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic pool and scenes file")
    p.add_argument("--n", type=_positive_int, required=True, help="number of point clouds")
    p.add_argument("--classes", type=_positive_int, required=True)
    p.add_argument("--spec", help="scene spec JSON file")
    p.add_argument("--abundance", help="comma-separated class weights")
    p.add_argument("--boxes-mean", type=float, default=2.5, dest="boxes_mean")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--m", type=_positive_int, default=5, help="MC passes per record")
    p.add_argument("--dropout", type=float, default=0.3)
    p.add_argument("--out", required=True, help="pool JSONL output path")
    p.add_argument("--scenes-out", dest="scenes_out", help="scenes JSON output path")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("select", help="run one selection round on a pool file")
    p.add_argument("--pool", required=True)
    p.add_argument("--strategy", required=True, choices=[s.value for s in Strategy])
    p.add_argument("--classes", type=_positive_int, required=True)
    p.add_argument("--k1", type=_positive_int)
    p.add_argument("--k2", type=_positive_int)
    p.add_argument("--nr", type=_positive_int, required=True)
    p.add_argument("--h", type=float, default=5.0)
    p.add_argument("--m", type=_positive_int, default=5)
    p.add_argument("--grid-size", type=_positive_int, default=256, dest="grid_size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--timing", choices=["none", "wall"], default="none")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("loop", help="run the multi-round selection loop")
    p.add_argument("--config", required=True, help="flat key = value config file")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_loop)

    p = sub.add_parser("stats", help="per-cloud entropy and stage diagnostics CSVs")
    p.add_argument("--pool", required=True)
    p.add_argument("--classes", type=_positive_int, required=True)
    p.add_argument("--out", help="entropy CSV path (stdout if omitted)")
    p.add_argument("--distances-out", dest="distances_out")
    p.add_argument("--medoids-out", dest="medoids_out")
    p.add_argument("--greedy-out", dest="greedy_out")
    p.add_argument("--k1", type=_positive_int)
    p.add_argument("--k2", type=_positive_int)
    p.add_argument("--nr", type=_positive_int)
    p.add_argument("--h", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("bench", help="time selection across pool sizes")
    p.add_argument("--sizes", required=True, help="comma-separated pool sizes")
    p.add_argument("--strategy", required=True, choices=[s.value for s in Strategy])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nr", type=_positive_int, default=10)
    p.add_argument("--repeats", type=_positive_int, default=3)
    p.add_argument("--out", help="timing CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="render figures from metrics/bench CSVs")
    p.add_argument("--metrics", nargs="*", help="metrics CSV paths")
    p.add_argument("--bench", help="bench CSV path")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (PoolParseError, PoolSchemaError, IntegrityError, DegeneratePoolError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except BoxalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())

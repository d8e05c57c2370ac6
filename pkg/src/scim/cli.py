"""Command-line pipeline driver.

Every stage is a subcommand; ``pipeline`` runs them all in order. Exit
status: 0 success, 1 validation/config error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from scim import pipeline, pseudolabel, synthgen, tensorio, voxelmap
from scim.errors import ScimError


def _load_pipeline_config(args) -> pipeline.PipelineConfig:
    if getattr(args, "config", None):
        return pipeline.PipelineConfig.from_file(args.config)
    return pipeline.PipelineConfig()


def cmd_synth(args) -> int:
    config = synthgen.load_config(args.config) if args.config else synthgen.SynthConfig()
    if args.seed is not None:
        config.seed = args.seed
    synthgen.generate(config, args.out)
    return 0


def cmd_map(args) -> int:
    bundle = tensorio.load_scene(args.scene)
    cfg = _load_pipeline_config(args)
    vmap = voxelmap.build_map(bundle, cfg.voxel_size)
    voxelmap.dump_map(vmap, args.out)
    return 0


def cmd_optimize(args) -> int:
    bundle = tensorio.load_scene(args.scene)
    cfg = _load_pipeline_config(args)
    ctx = pipeline.prepare(bundle, cfg, args.seed)
    best, trace, _ = pipeline.run_optimize(ctx, cfg, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.write_json(out / "params.json",
                        pipeline.params_document(best, trace, cfg, args.seed))
    return 0


def cmd_cluster(args) -> int:
    bundle = tensorio.load_scene(args.scene)
    cfg = _load_pipeline_config(args)
    best = json.loads(Path(args.params).read_text())["best"]
    ctx = pipeline.prepare(bundle, cfg, args.seed)
    solution = pipeline.run_cluster(ctx, cfg, best, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tensorio.write_array(out / "assignments.tns", solution.labels.astype(np.int32))
    return 0


def cmd_pseudolabel(args) -> int:
    bundle = tensorio.load_scene(args.scene)
    cfg = _load_pipeline_config(args)
    ctx = pipeline.prepare(bundle, cfg, args.seed)
    labels = tensorio.read_array(args.assignments).astype(np.int64)
    from scim.clustering import ClusterSolution
    n_clusters = int(labels.max(initial=-1)) + 1
    solution = ClusterSolution(labels=labels, n_clusters=n_clusters,
                               backend="precomputed", params={})
    vmap = voxelmap.build_map(bundle, cfg.voxel_size)
    frames, merged, pl_config, delta = pipeline.run_pseudolabel(ctx, cfg, solution, vmap)
    pseudolabel.write_pseudolabels(frames, merged, pl_config, delta, args.out)
    return 0


def cmd_eval(args) -> int:
    bundle = tensorio.load_scene(args.scene)
    labels_flat, meta = pseudolabel.read_pseudolabels(bundle, args.pseudolabels)
    metrics = pipeline.evaluate_pseudolabels(bundle, labels_flat, meta)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.write_json(out / "metrics.json", metrics)
    return 0


def cmd_pipeline(args) -> int:
    bundle = tensorio.load_scene(args.scene)
    cfg = _load_pipeline_config(args)
    pipeline.run_pipeline(bundle, cfg, args.seed, args.out)
    return 0


def cmd_baseline(args) -> int:
    bundle = tensorio.load_scene(args.scene)
    cfg = _load_pipeline_config(args)
    if args.method == "nakajima":
        pipeline.run_baseline_nakajima(bundle, cfg, args.seed, args.out)
    else:
        pipeline.run_baseline_uhlemeyer(bundle, cfg, args.seed, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scim",
        description="Multi-descriptor scene clustering, parameter optimization, "
                    "and pseudo-label generation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, scene=True, out=True, config=True, seed=True):
        if scene:
            p.add_argument("--scene", required=True, help="scene bundle directory")
        if out:
            p.add_argument("--out", required=True, help="output directory")
        if config:
            p.add_argument("--config", help="pipeline config JSON "
                           "(keys: " + ", ".join(sorted(pipeline.PipelineConfig().__dict__)) + ")")
        if seed:
            p.add_argument("--seed", type=int, default=0, help="global random seed")

    p = sub.add_parser("synth", help="generate a synthetic scene bundle")
    p.add_argument("--config", help="synth config JSON (schema: SynthConfig)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("map", help="build and dump the fused voxel map")
    add_common(p)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("optimize", help="optimize clustering parameters -> params.json")
    add_common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("cluster", help="cluster with given params -> assignments tensor")
    add_common(p)
    p.add_argument("--params", required=True, help="params.json from 'optimize'")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("pseudolabel", help="merge map and clusters -> pseudo-label tensors")
    add_common(p)
    p.add_argument("--assignments", required=True, help="assignments tensor from 'cluster'")
    p.set_defaults(func=cmd_pseudolabel)

    p = sub.add_parser("eval", help="evaluate pseudo-labels -> metrics.json")
    add_common(p, config=False, seed=False)
    p.add_argument("--pseudolabels", required=True, help="pseudolabel output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="run every stage in order")
    add_common(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("baseline", help="run a baseline method end to end")
    add_common(p)
    p.add_argument("--method", choices=["nakajima", "uhlemeyer"], required=True)
    p.set_defaults(func=cmd_baseline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

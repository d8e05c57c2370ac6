"""Stage orchestration shared by the CLI subcommands.

Every stage derives its own RNG seed from the single global seed and a
stage name, so stages are independently reproducible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from scim import clustering, descriptors, evaluation, graph, optimizer, pseudolabel, tensorio, voxelmap
from scim.errors import ConfigError
from scim.scenemodel import SceneBundle


def stage_seed(seed: int, stage: str) -> int:
    digest = hashlib.blake2b(stage.encode(), digest_size=4).digest()
    return (int(seed) ^ int.from_bytes(digest, "little")) & 0x7FFFFFFF


@dataclass
class PipelineConfig:
    """All stage defaults in one JSON-serializable document."""

    modalities: list[str] | None = None          # None: fuse every modality
    backend: str = "hdbscan"
    frame_stride: int = 5
    points_per_frame: int = 100
    delta_conf_percentile: float = 70.0
    reference_pairs: int = 10_000
    budget: int = 200
    init_random: int = 20
    candidates_per_step: int = 1024
    length_scale: float = 0.2
    gp_noise: float = 1e-4
    min_cluster_size_bounds: list[int] = field(default_factory=lambda: [5, 100])
    min_samples_bounds: list[int] = field(default_factory=lambda: [2, 50])
    inflation_bounds: list[float] = field(default_factory=lambda: [1.2, 5.0])
    prune_bounds: list[float] = field(default_factory=lambda: [1e-4, 0.2])
    penalize_noise: bool = True
    delta: float | None = None
    delta_percentile: float = 60.0
    merge_iou: float = 0.5
    ignore_id: int = 255
    pca_dim: int = 50
    baseline_frame_stride: int | None = None
    baseline_budget: int = 60
    voxel_size: float | None = None              # None: manifest value

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        allowed = set(cls().__dict__)
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown pipeline config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class SceneContext:
    """Per-scene precomputation shared across stages."""

    bundle: SceneBundle
    modalities: list[str]
    normalized: dict[str, np.ndarray]
    delta_conf: float
    alphas: descriptors.HarmonizationFactors


def prepare(bundle: SceneBundle, config: PipelineConfig, seed: int) -> SceneContext:
    """Normalize descriptors, pick the confidence threshold, harmonize scales."""
    modalities = config.modalities or list(bundle.manifest.modalities)
    for mod in modalities:
        if mod not in bundle.descriptors:
            raise ConfigError(f"modality {mod!r} not present in scene")
    normalized = {m: descriptors.l2_normalize(bundle.descriptors[m]) for m in modalities}
    delta_conf = float(np.percentile(bundle.cert, config.delta_conf_percentile))
    pairs = descriptors.sample_reference_pairs(
        bundle, delta_conf, config.reference_pairs, stage_seed(seed, "harmonize"))
    alphas = descriptors.HarmonizationFactors(alpha={})
    for mod in modalities:
        rows_a = normalized[mod][pairs[:, 0]]
        rows_b = normalized[mod][pairs[:, 1]]
        d = np.linalg.norm(rows_a - rows_b, axis=1)
        q = descriptors.nearest_rank_quantile(d, 0.9)
        if q == 0:
            alphas.alpha[mod] = 1.0
            alphas.degenerate.add(mod)
        else:
            alphas.alpha[mod] = 1.0 / q
    return SceneContext(bundle=bundle, modalities=modalities, normalized=normalized,
                        delta_conf=delta_conf, alphas=alphas)


def _sampled_graph(ctx: SceneContext, config: PipelineConfig, seed: int) -> graph.ClusteringGraph:
    spec = graph.SubsampleSpec(frame_stride=config.frame_stride,
                               points_per_frame=config.points_per_frame,
                               seed=stage_seed(seed, "subsample"))
    sampled = graph.subsample(ctx.bundle, spec)
    dists = {m: ctx.alphas.alpha[m] * descriptors.pairwise_distances(ctx.normalized[m], sampled)
             for m in ctx.modalities}
    uniform = graph.EdgeWeights({m: 1.0 / len(ctx.modalities) for m in ctx.modalities})
    return graph.ClusteringGraph(sampled_indices=sampled,
                                 fused=graph.fuse(dists, uniform),
                                 modality_dists=dists)


def run_optimize(ctx: SceneContext, config: PipelineConfig, seed: int):
    """Optimize descriptor weights and backend parameters on the sample."""
    g = _sampled_graph(ctx, config, seed)
    space = optimizer.default_param_space(
        ctx.modalities, config.backend,
        tuple(config.min_cluster_size_bounds), tuple(config.min_samples_bounds),
        tuple(config.inflation_bounds), tuple(config.prune_bounds))
    gp_config = optimizer.GPConfig(
        length_scale=config.length_scale, noise=config.gp_noise,
        init_random=config.init_random, candidates_per_step=config.candidates_per_step,
        budget=config.budget, seed=stage_seed(seed, "optimize"))
    objective = optimizer.make_clustering_objective(
        g, ctx.bundle.pred, ctx.bundle.cert, ctx.delta_conf,
        backend=config.backend, penalize_noise=config.penalize_noise)
    best, trace = optimizer.optimize(space, gp_config, objective)
    return best, trace, g


def params_document(best: dict, trace: optimizer.OptimizerTrace,
                    config: PipelineConfig, seed: int) -> dict:
    return {
        "best": best,
        "best_index": trace.best_index,
        "trace": [{"theta": [float(t) for t in ev.theta],
                   "objective": ev.objective, "failed": ev.failed}
                  for ev in trace.evaluations],
        "seed": seed,
        "config": {"backend": config.backend, "budget": config.budget,
                   "init_random": config.init_random,
                   "candidates_per_step": config.candidates_per_step,
                   "length_scale": config.length_scale, "gp_noise": config.gp_noise},
    }


def run_cluster(ctx: SceneContext, config: PipelineConfig, best: dict,
                seed: int) -> clustering.ClusterSolution:
    """Cluster the sample with the chosen parameters, extend to all vertices."""
    g = _sampled_graph(ctx, config, seed)
    weights = graph.EdgeWeights({m[2:]: v for m, v in best.items() if m.startswith("w_")})
    fused = graph.fuse(g.modality_dists, weights)
    backend_params = {k: v for k, v in best.items() if not k.startswith("w_")}
    solution = clustering.cluster_backend(fused, config.backend, backend_params)

    cross = None
    for mod, w in weights.weights.items():
        term = w * ctx.alphas.alpha[mod] * descriptors.cross_distances(
            ctx.normalized[mod], ctx.normalized[mod][g.sampled_indices])
        cross = term if cross is None else cross + term
    return clustering.nn_extend(solution, g.sampled_indices, cross, ctx.bundle.n_vertices)


def run_pseudolabel(ctx: SceneContext, config: PipelineConfig,
                    solution: clustering.ClusterSolution,
                    vmap: voxelmap.VoxelMap):
    """Fuse map renderings with the extended clustering into pseudo-labels."""
    pl_config = pseudolabel.PseudoLabelConfig(
        delta=config.delta, delta_percentile=config.delta_percentile,
        merge_iou=config.merge_iou, ignore_id=config.ignore_id)
    map_classes, map_certs = voxelmap.render(vmap, ctx.bundle)
    delta = pseudolabel.resolve_delta(pl_config, vmap.mean_cert())
    merged = pseudolabel.merge_clusters(solution, map_classes, pl_config,
                                        ctx.bundle.manifest.n_classes)
    frames = pseudolabel.make_pseudolabels(ctx.bundle, map_classes, map_certs,
                                           solution, merged, pl_config, delta)
    return frames, merged, pl_config, delta


def evaluate_pseudolabels(bundle: SceneBundle, labels_flat: np.ndarray,
                          meta: dict, notes: list[str] | None = None) -> dict:
    """Open-world metrics of emitted pseudo-labels against ground truth."""
    names = bundle.manifest.classes
    outlier_ids = [names.index(n) for n in bundle.manifest.outlier_classes]
    n_known = len(names) - len(outlier_ids)
    metrics = evaluation.evaluate_openworld(
        bundle.label, labels_flat, n_known=n_known, outlier_classes=outlier_ids,
        ignore_id=int(meta["ignore_id"]), notes=notes)
    # stable, name-keyed output
    metrics["per_class_iou"] = {names[c] if 0 <= c < len(names) else str(c): v
                                for c, v in metrics["per_class_iou"].items()}
    metrics["out_iou"] = {names[c]: v for c, v in metrics["out_iou"].items()}
    return metrics


def write_json(path, doc: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def run_pipeline(bundle: SceneBundle, config: PipelineConfig, seed: int,
                 out_dir) -> dict:
    """All stages in order; writes every artifact under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = prepare(bundle, config, seed)

    vmap = voxelmap.build_map(bundle, config.voxel_size)
    voxelmap.dump_map(vmap, out_dir / "map")

    best, trace, _ = run_optimize(ctx, config, seed)
    write_json(out_dir / "params.json", params_document(best, trace, config, seed))

    solution = run_cluster(ctx, config, best, seed)
    tensorio.write_array(out_dir / "assignments.tns", solution.labels.astype(np.int32))

    frames, merged, pl_config, delta = run_pseudolabel(ctx, config, solution, vmap)
    pseudolabel.write_pseudolabels(frames, merged, pl_config, delta,
                                   out_dir / "pseudolabels")

    labels_flat, meta = pseudolabel.read_pseudolabels(bundle, out_dir / "pseudolabels")
    notes = ["dimensionality reduction for the visual-baseline edge function uses PCA only"]
    metrics = evaluate_pseudolabels(bundle, labels_flat, meta, notes=notes)
    write_json(out_dir / "metrics.json", metrics)
    return metrics


# ---------------------------------------------------------------------------
# baselines

def run_baseline_nakajima(bundle: SceneBundle, config: PipelineConfig,
                          seed: int, out_dir) -> dict:
    """Entropy-gated edge function clustered with MCL; inflation and the
    prune threshold are chosen by the same black-box optimization."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stride = config.baseline_frame_stride or config.frame_stride
    spec = graph.SubsampleSpec(frame_stride=stride,
                               points_per_frame=config.points_per_frame,
                               seed=stage_seed(seed, "subsample"))
    sampled = graph.subsample(bundle, spec)
    entropy = graph.entropy_proxy(bundle)
    g = graph.build_nakajima(bundle, sampled, entropy)

    delta_conf = float(np.percentile(bundle.cert, config.delta_conf_percentile))
    space = optimizer.ParamSpace([
        optimizer.Dimension("inflation", *config.inflation_bounds),
        optimizer.Dimension("prune_threshold", *config.prune_bounds),
    ])
    gp_config = optimizer.GPConfig(
        length_scale=config.length_scale, noise=config.gp_noise,
        init_random=min(config.init_random, config.baseline_budget),
        candidates_per_step=config.candidates_per_step,
        budget=config.baseline_budget, seed=stage_seed(seed, "optimize"))
    objective = optimizer.make_clustering_objective(
        g, bundle.pred, bundle.cert, delta_conf, backend="mcl",
        penalize_noise=config.penalize_noise)
    best, trace = optimizer.optimize(space, gp_config, objective)
    write_json(out_dir / "params.json", params_document(best, trace, config, seed))

    solution = clustering.cluster_backend(g.fused, "mcl", best)
    h = entropy[:, None]
    hs = entropy[sampled][:, None]
    segm_cross = descriptors.cross_distances(
        (1.0 - h) * bundle.descriptors["segm"], (1.0 - hs) * bundle.descriptors["segm"][sampled])
    geom_cross = descriptors.cross_distances(
        h * bundle.descriptors["geom"], hs * bundle.descriptors["geom"][sampled])
    extended = clustering.nn_extend(solution, sampled, segm_cross + geom_cross,
                                    bundle.n_vertices)

    n_known = bundle.manifest.n_classes
    predictions = np.where(extended.labels == clustering.NOISE, -1,
                           extended.labels + n_known)
    tensorio.write_array(out_dir / "assignments.tns", extended.labels.astype(np.int32))
    names = bundle.manifest.classes
    outlier_ids = [names.index(n) for n in bundle.manifest.outlier_classes]
    metrics = evaluation.evaluate_openworld(
        bundle.label, predictions, n_known=len(names) - len(outlier_ids),
        outlier_classes=outlier_ids,
        notes=["pure clustering baseline: every cluster is unsupervised"])
    write_json(out_dir / "metrics.json", metrics)
    return metrics


def run_baseline_uhlemeyer(bundle: SceneBundle, config: PipelineConfig,
                           seed: int, out_dir) -> dict:
    """Cluster only the uncertain vertices with DBSCAN on PCA-reduced visual
    descriptors (hand-tuned eps=3.5, min samples=10); confident vertices keep
    the base prediction."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    delta_conf = float(np.percentile(bundle.cert, config.delta_conf_percentile))
    outliers = np.flatnonzero(bundle.cert <= delta_conf)
    g = graph.build_uhlemeyer(bundle, outliers, config.pca_dim)
    solution = clustering.dbscan(g.fused, eps=3.5, min_samples=10)

    n_known = bundle.manifest.n_classes
    predictions = bundle.pred.astype(np.int64).copy()
    predictions[outliers] = np.where(solution.labels == clustering.NOISE, -1,
                                     solution.labels + n_known)
    assignments = np.full(bundle.n_vertices, clustering.NOISE, dtype=np.int32)
    assignments[outliers] = solution.labels
    tensorio.write_array(out_dir / "assignments.tns", assignments)

    names = bundle.manifest.classes
    outlier_ids = [names.index(n) for n in bundle.manifest.outlier_classes]
    metrics = evaluation.evaluate_openworld(
        bundle.label, predictions, n_known=len(names) - len(outlier_ids),
        outlier_classes=outlier_ids,
        notes=["dimensionality reduction uses PCA only"])
    write_json(out_dir / "metrics.json", metrics)
    return metrics

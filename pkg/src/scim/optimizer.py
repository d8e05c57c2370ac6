"""Black-box optimization of clustering parameters with a GP surrogate.

The objective rewards clusterings that agree (in mean IoU after constrained
matching) with the confident predictions on the subsampled graph. The
surrogate is a fixed-kernel Gaussian process; candidates for the expected-
improvement acquisition are drawn uniformly at random.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist
from scipy.stats import norm
from sklearn.base import BaseEstimator

from scim import clustering, evaluation
from scim.graph import ClusteringGraph, EdgeWeights, fuse


@dataclass(frozen=True)
class Dimension:
    name: str
    lower: float
    upper: float
    integer: bool = False
    simplex_group: str | None = None

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"dimension {self.name!r}: lower must be < upper")


@dataclass
class ParamSpace:
    """Unit-box parameterization of clustering parameters.

    Dimensions flagged with a ``simplex_group`` are sampled in [0, 1] and
    jointly normalized to sum 1 at decode time; integer dimensions are
    rounded after the affine map to [lower, upper].
    """

    dims: list[Dimension]

    @property
    def n_dims(self) -> int:
        return len(self.dims)

    def sample_unit(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(size=(n, self.n_dims))

    def decode(self, u: np.ndarray) -> dict[str, float]:
        u = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)
        out: dict[str, float] = {}
        groups: dict[str, list[int]] = {}
        for k, dim in enumerate(self.dims):
            if dim.simplex_group is not None:
                groups.setdefault(dim.simplex_group, []).append(k)
                continue
            value = dim.lower + u[k] * (dim.upper - dim.lower)
            if dim.integer:
                value = int(np.clip(round(value), dim.lower, dim.upper))
            out[dim.name] = value
        for members in groups.values():
            raw = u[members]
            total = raw.sum()
            if total < 1e-6:
                raw = np.full(len(members), 1.0)
                total = raw.sum()
            for k, w in zip(members, raw / total):
                out[self.dims[k].name] = float(w)
        return out


def default_param_space(modalities: list[str],
                        backend: str = "hdbscan",
                        min_cluster_size_bounds=(5, 100),
                        min_samples_bounds=(2, 50),
                        inflation_bounds=(1.2, 5.0),
                        prune_bounds=(1e-4, 0.2)) -> ParamSpace:
    """Descriptor weights on the simplex plus backend hyperparameters."""
    dims = [Dimension(f"w_{m}", 0.0, 1.0, simplex_group="weights") for m in modalities]
    if backend == "hdbscan":
        dims += [Dimension("min_cluster_size", *min_cluster_size_bounds, integer=True),
                 Dimension("min_samples", *min_samples_bounds, integer=True)]
    elif backend == "mcl":
        dims += [Dimension("inflation", *inflation_bounds),
                 Dimension("prune_threshold", *prune_bounds)]
    elif backend == "dbscan":
        dims += [Dimension("eps", 0.01, 5.0), Dimension("min_samples", 2, 50, integer=True)]
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return ParamSpace(dims)


@dataclass
class GPConfig:
    length_scale: float = 0.2
    noise: float = 1e-4
    jitter: float = 1e-8
    init_random: int = 20
    candidates_per_step: int = 1024
    budget: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.budget < self.init_random:
            raise ValueError("budget must be >= init_random")


@dataclass
class Evaluation:
    theta: np.ndarray
    objective: float
    failed: bool = False


@dataclass
class OptimizerTrace:
    evaluations: list[Evaluation] = field(default_factory=list)

    @property
    def best_index(self) -> int:
        best, best_y = 0, -math.inf
        for i, ev in enumerate(self.evaluations):
            if ev.objective > best_y:
                best, best_y = i, ev.objective
        return best

    def objectives(self) -> np.ndarray:
        return np.array([ev.objective for ev in self.evaluations])


def matern52(r: np.ndarray, length_scale: float) -> np.ndarray:
    s = np.sqrt(5.0) * r / length_scale
    return (1.0 + s + s ** 2 / 3.0) * np.exp(-s)


class MaternGP(BaseEstimator):
    """GP regressor with fixed Matérn-5/2 kernel and exact dense solve.

    Signal variance is taken from the observed objective variance; the
    length scale is a fixed fraction of the unit box.
    """

    def __init__(self, length_scale=0.2, noise=1e-4, jitter=1e-8):
        self.length_scale = length_scale
        self.noise = noise
        self.jitter = jitter

    def fit(self, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64)
        self.X_ = X
        self.y_mean_ = float(y.mean())
        self.signal_var_ = max(float(y.var()), 1e-10)
        k = self.signal_var_ * matern52(cdist(X, X), self.length_scale)
        k[np.diag_indices_from(k)] += self.noise + self.jitter
        self.chol_ = cho_factor(k, lower=True)
        self.alpha_ = cho_solve(self.chol_, y - self.y_mean_)
        return self

    def predict(self, Xq, return_std=False):
        Xq = np.atleast_2d(np.asarray(Xq, dtype=np.float64))
        ks = self.signal_var_ * matern52(cdist(Xq, self.X_), self.length_scale)
        mu = self.y_mean_ + ks @ self.alpha_
        if not return_std:
            return mu
        v = cho_solve(self.chol_, ks.T)
        var = self.signal_var_ - np.einsum("ij,ji->i", ks, v)
        return mu, np.sqrt(np.clip(var, 0.0, None))


def expected_improvement(mu: np.ndarray, sigma: np.ndarray, best: float) -> np.ndarray:
    """EI for maximization; sigma == 0 collapses to max(mu - best, 0)."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    improve = mu - best
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, improve / np.where(sigma > 0, sigma, 1.0), 0.0)
        ei = np.where(sigma > 0,
                      improve * norm.cdf(z) + sigma * norm.pdf(z),
                      np.maximum(improve, 0.0))
    return ei


def optimize(space: ParamSpace, config: GPConfig, objective_fn) -> tuple[dict, OptimizerTrace]:
    """Seeded random warm-up followed by GP/EI-guided queries.

    ``objective_fn`` receives decoded parameters and returns a scalar; an
    exception is recorded as objective 0.0 with a failure flag and the loop
    continues. Returns the decoded best parameters and the full trace.
    """
    rng = np.random.default_rng(config.seed)
    trace = OptimizerTrace()

    def evaluate(theta: np.ndarray):
        params = space.decode(theta)
        try:
            y = float(objective_fn(params))
            trace.evaluations.append(Evaluation(theta=theta, objective=y))
        except Exception:
            trace.evaluations.append(Evaluation(theta=theta, objective=0.0, failed=True))

    for theta in space.sample_unit(rng, config.init_random):
        evaluate(theta)

    gp = MaternGP(config.length_scale, config.noise, config.jitter)
    for _ in range(config.budget - config.init_random):
        X = np.array([ev.theta for ev in trace.evaluations])
        y = trace.objectives()
        gp.fit(X, y)
        candidates = space.sample_unit(rng, config.candidates_per_step)
        mu, sigma = gp.predict(candidates, return_std=True)
        ei = expected_improvement(mu, sigma, float(y.max()))
        evaluate(candidates[int(np.argmax(ei))])

    best = space.decode(trace.evaluations[trace.best_index].theta)
    return best, trace


# ---------------------------------------------------------------------------
# clustering objective (mean IoU against confident predictions)

def miou_vs_reference(cluster_labels: np.ndarray, reference: np.ndarray,
                      penalize_noise: bool = True) -> float:
    """Mean IoU of the best constrained matching between clusters and a
    reference labeling. NOISE vertices either count as a never-matching
    pseudo-cluster (default) or are dropped."""
    cluster_labels = np.asarray(cluster_labels, dtype=np.int64)
    reference = np.asarray(reference, dtype=np.int64)
    keep = reference >= 0
    if not penalize_noise:
        keep &= cluster_labels != clustering.NOISE
    cluster_labels, reference = cluster_labels[keep], reference[keep]
    ref_classes = np.unique(reference)
    if len(ref_classes) == 0:
        return 0.0
    table = evaluation.contingency(reference, cluster_labels)
    match = evaluation.constrained_hungarian(table)
    ref_sizes = {int(c): int((reference == c).sum()) for c in ref_classes}
    cl_sizes = {int(c): int((cluster_labels == c).sum()) for c in np.unique(cluster_labels)}
    total = 0.0
    for cls in ref_classes:
        cls = int(cls)
        matched = match.matching.get(cls)
        if matched is None:
            continue
        li = table.label_ids.index(cls)
        ci = table.cluster_ids.index(matched)
        inter = int(table.counts[li, ci])
        union = ref_sizes[cls] + cl_sizes[matched] - inter
        if union > 0:
            total += inter / union
    return total / len(ref_classes)


def make_clustering_objective(graph: ClusteringGraph, pred: np.ndarray,
                              cert: np.ndarray, delta_conf: float,
                              backend: str = "hdbscan",
                              penalize_noise: bool = True):
    """Objective closure mapping decoded parameters to mean IoU against the
    confident predictions on the sampled graph."""
    pred = np.asarray(pred, dtype=np.int64)
    confident = cert[graph.sampled_indices] > delta_conf
    if not confident.any():
        raise ValueError("no confident vertex in the sample; lower delta_conf")
    reference = pred[graph.sampled_indices]

    def objective(params: dict) -> float:
        weight_params = {m[2:]: v for m, v in params.items() if m.startswith("w_")}
        if weight_params:
            fused = fuse(graph.modality_dists, EdgeWeights(weight_params))
        else:
            fused = graph.fused  # fixed edge function, only backend params vary
        backend_params = {k: v for k, v in params.items() if not k.startswith("w_")}
        solution = clustering.cluster_backend(fused, backend, backend_params)
        labels = solution.labels[confident]
        return miou_vs_reference(labels, reference[confident], penalize_noise)

    return objective

"""Discovering and reporting new types: k-means over learned codes, novelty
scoring against the known digit classes, and a 2-D distance-preserving
embedding for inspection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import network
from .errors import (
    KTooLarge,
    MissingKnownRows,
    PerplexityInfeasible,
    ShapeMismatch,
)
from .network import ModelParams

GENERATED = -1  # label value tagging generated rows


@dataclass
class CodeMatrix:
    """One flattened code per object. labels[i] is the digit class 0-9 for
    known objects and GENERATED (-1) for generated ones."""

    rows: np.ndarray  # (n, d) float32
    labels: np.ndarray  # (n,) int16

    def __post_init__(self) -> None:
        if self.rows.ndim != 2 or self.rows.shape[0] < 1:
            raise ShapeMismatch(f"need a (n>=1, d) matrix, got {self.rows.shape}")
        if len(self.labels) != self.rows.shape[0]:
            raise ShapeMismatch("one label per row required")

    @property
    def generated_mask(self) -> np.ndarray:
        return self.labels == GENERATED

    @staticmethod
    def concatenate(parts: list["CodeMatrix"]) -> "CodeMatrix":
        return CodeMatrix(
            rows=np.concatenate([p.rows for p in parts], axis=0),
            labels=np.concatenate([p.labels for p in parts]),
        )


@dataclass
class Clustering:
    k: int
    centroids: np.ndarray  # (k, d)
    assignments: np.ndarray  # (n,)
    objective: float
    iterations_run: int
    objective_trace: list[float] = field(default_factory=list)


@dataclass
class ClusterInfo:
    index: int
    size: int
    generated_fraction: float
    histogram: dict[str, int]  # keys '0'..'9' and 'generated'; sums to size
    is_new_type: bool
    medoid_row: int | None


@dataclass
class ClusterReport:
    clusters: list[ClusterInfo]
    new_type_count: int
    new_type_threshold: float


@dataclass
class Embedding2D:
    coords: np.ndarray  # (n, 2)
    kl_divergence: float
    kl_trace: list[float]
    perplexity: float
    max_perplexity_error: float
    iterations: int
    rng_seed: int


def extract_features(
    params: ModelParams,
    images: np.ndarray,
    labels: np.ndarray | None = None,
    batch_size: int = 256,
) -> CodeMatrix:
    """Flattened post-WTA top-layer codes for a stack of images. labels=None
    tags every row as generated."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3:
        raise ShapeMismatch(f"expected (n, h, w) images, got {images.shape}")
    chunks = [
        network.encode_rows(params, images[i : i + batch_size])
        for i in range(0, images.shape[0], batch_size)
    ]
    rows = np.concatenate(chunks, axis=0)
    if labels is None:
        tags = np.full(rows.shape[0], GENERATED, dtype=np.int16)
    else:
        tags = np.asarray(labels, dtype=np.int16)
    return CodeMatrix(rows=rows, labels=tags)


def _sq_distances_to(rows: np.ndarray, centers: np.ndarray, row_sq: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances (n, k) via the expansion trick."""
    cross = rows @ centers.T.astype(rows.dtype)
    center_sq = (centers.astype(np.float64) ** 2).sum(axis=1)
    d = row_sq[:, None] + center_sq[None, :] - 2.0 * cross.astype(np.float64)
    np.maximum(d, 0.0, out=d)
    return d


def _kmeans_pp_seed(rows: np.ndarray, k: int, row_sq: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding; duplicates degrade gracefully to lowest-index picks."""
    n = rows.shape[0]
    centers = np.empty((k, rows.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = rows[first]
    best = _sq_distances_to(rows, centers[:1], row_sq)[:, 0]
    for j in range(1, k):
        total = best.sum()
        if total <= 0.0:
            taken = {int(i) for i in range(j)}  # all remaining points coincide
            pick = next(i for i in range(n) if i not in taken)
        else:
            pick = int(rng.choice(n, p=best / total))
        centers[j] = rows[pick]
        d_new = _sq_distances_to(rows, centers[j : j + 1], row_sq)[:, 0]
        np.minimum(best, d_new, out=best)
    return centers


def kmeans(
    codes: CodeMatrix,
    k: int,
    restarts: int = 5,
    rng_seed: int = 0,
    max_iters: int = 100,
) -> Clustering:
    """Lloyd iterations from k-means++ seeding, best of `restarts` runs by
    objective. The per-iteration objective trace is non-increasing."""
    rows = codes.rows
    n = rows.shape[0]
    if k < 1:
        raise ValueError(f"k {k} must be >= 1")
    if k > n:
        raise KTooLarge(f"k {k} exceeds the {n} rows")
    row_sq = (rows.astype(np.float64) ** 2).sum(axis=1)
    best: Clustering | None = None
    for restart in range(restarts):
        rng = np.random.default_rng([rng_seed, restart])
        centers = _kmeans_pp_seed(rows, k, row_sq, rng)
        assign = np.full(n, -1, dtype=np.int64)
        trace: list[float] = []
        iterations = 0
        for _ in range(max_iters):
            d = _sq_distances_to(rows, centers, row_sq)
            new_assign = d.argmin(axis=1)
            trace.append(float(d[np.arange(n), new_assign].sum()))
            iterations += 1
            if np.array_equal(new_assign, assign):
                break
            assign = new_assign
            for j in range(k):
                members = rows[assign == j]
                if len(members):
                    centers[j] = members.astype(np.float64).mean(axis=0)
                else:
                    # re-seed an emptied cluster at the point farthest from
                    # its current centroid; never increases the objective
                    far = int(d[np.arange(n), assign].argmax())
                    centers[j] = rows[far]
        objective = trace[-1]
        run = Clustering(
            k=k, centroids=centers, assignments=assign, objective=objective,
            iterations_run=iterations, objective_trace=trace,
        )
        if best is None or run.objective < best.objective:
            best = run
    assert best is not None
    return best


def _class_stats(reference: CodeMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Known-class centroids and mean intra-class distances (to the centroid)."""
    known = ~reference.generated_mask
    if not known.any():
        raise MissingKnownRows("no labeled digit rows to score against")
    classes = np.unique(reference.labels[known])
    centroids = np.empty((len(classes), reference.rows.shape[1]), dtype=np.float64)
    spreads = np.empty(len(classes))
    for i, cls in enumerate(classes):
        members = reference.rows[reference.labels == cls].astype(np.float64)
        centroids[i] = members.mean(axis=0)
        spreads[i] = np.sqrt(((members - centroids[i]) ** 2).sum(axis=1)).mean()
    return classes, centroids, spreads


def novelty_scores(codes: CodeMatrix, reference: CodeMatrix | None = None) -> np.ndarray:
    """Per row: Euclidean distance to the nearest known-class centroid divided
    by that class's mean intra-class distance. reference supplies the labeled
    rows defining the centroids (defaults to `codes` itself); pass the
    training-split codes to score held-out rows without leakage."""
    ref = codes if reference is None else reference
    _classes, centroids, spreads = _class_stats(ref)
    row_sq = (codes.rows.astype(np.float64) ** 2).sum(axis=1)
    d = np.sqrt(_sq_distances_to(codes.rows, centroids, row_sq))
    nearest = d.argmin(axis=1)
    spread = np.maximum(spreads[nearest], 1e-12)
    return d[np.arange(len(nearest)), nearest] / spread


def build_report(
    clustering: Clustering, codes: CodeMatrix, new_type_threshold: float = 0.9
) -> ClusterReport:
    """Per-cluster composition and new-type verdicts; the medoid is the member
    minimizing the summed distance to the rest of its cluster."""
    if not 0.5 < new_type_threshold <= 1.0:
        raise ValueError(f"threshold {new_type_threshold} outside (0.5, 1]")
    clusters: list[ClusterInfo] = []
    new_count = 0
    for j in range(clustering.k):
        member_idx = np.where(clustering.assignments == j)[0]
        size = len(member_idx)
        if size == 0:
            clusters.append(
                ClusterInfo(index=j, size=0, generated_fraction=0.0,
                            histogram={}, is_new_type=False, medoid_row=None)
            )
            continue
        labels = codes.labels[member_idx]
        generated = int((labels == GENERATED).sum())
        histogram = {str(d): int((labels == d).sum()) for d in range(10)}
        histogram = {key: cnt for key, cnt in histogram.items() if cnt}
        if generated:
            histogram["generated"] = generated
        fraction = generated / size
        is_new = fraction >= new_type_threshold
        new_count += is_new
        members = codes.rows[member_idx].astype(np.float64)
        member_sq = (members**2).sum(axis=1)
        pair_d = np.sqrt(
            np.maximum(member_sq[:, None] + member_sq[None, :] - 2.0 * members @ members.T, 0.0)
        )
        medoid = int(member_idx[pair_d.sum(axis=1).argmin()])
        clusters.append(
            ClusterInfo(index=j, size=size, generated_fraction=float(fraction),
                        histogram=histogram, is_new_type=bool(is_new), medoid_row=medoid)
        )
    return ClusterReport(
        clusters=clusters, new_type_count=int(new_count),
        new_type_threshold=new_type_threshold,
    )


def _conditional_probs(sq_d_row: np.ndarray, beta: float, i: int) -> np.ndarray:
    p = np.exp(-sq_d_row * beta)
    p[i] = 0.0
    total = p.sum()
    if total <= 0.0:
        p[:] = 0.0
        return p
    return p / total


def _perplexity_of(p: np.ndarray) -> float:
    nz = p[p > 0]
    h = -(nz * np.log2(nz)).sum()
    return float(2.0**h)


def _bisect_beta(sq_d_row: np.ndarray, i: int, target: float, tol: float,
                 max_steps: int = 120) -> tuple[float, float]:
    """Find beta = 1/(2 sigma^2) so the row perplexity matches the target.
    Returns (beta, achieved error)."""
    beta, lo, hi = 1.0, 0.0, math.inf
    err = math.inf
    for _ in range(max_steps):
        perp = _perplexity_of(_conditional_probs(sq_d_row, beta, i))
        err = perp - target
        if abs(err) <= tol:
            break
        if err > 0:  # too many effective neighbors: sharpen
            lo = beta
            beta = beta * 2.0 if hi is math.inf else (beta + hi) / 2.0
        else:
            hi = beta
            beta = (lo + beta) / 2.0
        if hi is not math.inf and hi - lo < 1e-300:
            break
    return beta, abs(err)


def _joint_probabilities(rows: np.ndarray, perplexity: float) -> tuple[np.ndarray, float]:
    n = rows.shape[0]
    x = rows.astype(np.float64)
    sq = (x**2).sum(axis=1)
    d = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    p_cond = np.zeros((n, n))
    worst = 0.0
    for i in range(n):
        beta, err = _bisect_beta(d[i], i, perplexity, 1e-4)
        worst = max(worst, err)
        p_cond[i] = _conditional_probs(d[i], beta, i)
    p = (p_cond + p_cond.T) / (2.0 * n)
    return np.maximum(p, 1e-12), worst


def _kl_divergence(p: np.ndarray, q_num: np.ndarray, q_total: float) -> float:
    q = np.maximum(q_num / q_total, 1e-12)
    mask = p > 1e-12
    return float((p[mask] * np.log(p[mask] / q[mask])).sum())


def embed_2d(
    codes: CodeMatrix,
    perplexity: float = 30.0,
    iterations: int = 500,
    rng_seed: int = 0,
) -> Embedding2D:
    """Exact t-distributed stochastic neighbor embedding to 2-D.

    Per-point bandwidths are bisected to the perplexity target within 1e-4;
    gradient descent uses momentum (0.5 then 0.8), adaptive per-coordinate
    gains, and 4x early exaggeration for the first quarter of the run. The
    reported KL trace is always for the true (un-exaggerated) affinities.
    """
    rows = codes.rows
    n = rows.shape[0]
    if perplexity < 2.0 or n < 3.0 * perplexity:
        raise PerplexityInfeasible(
            f"perplexity {perplexity} needs at least {math.ceil(3 * perplexity)} rows, got {n}"
        )
    if iterations < 1:
        raise ValueError(f"iterations {iterations} must be >= 1")
    p, worst = _joint_probabilities(rows, perplexity)

    rng = np.random.default_rng(rng_seed)
    y = rng.standard_normal((n, 2)) * 1e-4
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    lr = max(n / 12.0, 50.0)
    exaggeration = 4.0
    exag_until = min(250, iterations // 4)
    kl_trace: list[float] = []

    for it in range(iterations):
        sq = (y**2).sum(axis=1)
        num = 1.0 / (1.0 + sq[:, None] + sq[None, :] - 2.0 * (y @ y.T))
        np.fill_diagonal(num, 0.0)
        q_total = num.sum()
        kl_trace.append(_kl_divergence(p, num, q_total))

        p_eff = p * exaggeration if it < exag_until else p
        pq = (p_eff - num / q_total) * num
        grad = 4.0 * ((np.diag(pq.sum(axis=1)) - pq) @ y)

        momentum = 0.5 if it < 250 else 0.8
        same_sign = np.sign(grad) == np.sign(velocity)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        velocity = momentum * velocity - lr * gains * grad
        y = y + velocity
        y = y - y.mean(axis=0)

    sq = (y**2).sum(axis=1)
    num = 1.0 / (1.0 + sq[:, None] + sq[None, :] - 2.0 * (y @ y.T))
    np.fill_diagonal(num, 0.0)
    final_kl = _kl_divergence(p, num, num.sum())
    kl_trace.append(final_kl)
    return Embedding2D(
        coords=y, kl_divergence=final_kl, kl_trace=kl_trace,
        perplexity=perplexity, max_perplexity_error=worst,
        iterations=iterations, rng_seed=rng_seed,
    )


def trustworthiness(
    original: np.ndarray, embedded: np.ndarray, n_neighbors: int = 12
) -> float:
    """Rank-based neighborhood preservation of an embedding, in [0,1]."""
    x = np.asarray(original, dtype=np.float64)
    y = np.asarray(embedded, dtype=np.float64)
    n = x.shape[0]
    if n_neighbors >= n / 2:
        raise ValueError(f"n_neighbors {n_neighbors} too large for {n} points")
    xsq = (x**2).sum(axis=1)
    dx = xsq[:, None] + xsq[None, :] - 2.0 * (x @ x.T)
    ysq = (y**2).sum(axis=1)
    dy = ysq[:, None] + ysq[None, :] - 2.0 * (y @ y.T)
    np.fill_diagonal(dx, np.inf)
    np.fill_diagonal(dy, np.inf)

    order_x = dx.argsort(axis=1, kind="stable")
    ranks_x = np.empty_like(order_x)
    cols = np.arange(n)
    for i in range(n):
        ranks_x[i, order_x[i]] = cols
    neighbors_y = dy.argsort(axis=1, kind="stable")[:, :n_neighbors]

    penalty = 0.0
    for i in range(n):
        r = ranks_x[i, neighbors_y[i]]
        penalty += float(r[r >= n_neighbors].sum() - (r >= n_neighbors).sum() * (n_neighbors - 1))
    norm = 2.0 / (n * n_neighbors * (2 * n - 3 * n_neighbors - 1))
    return 1.0 - norm * penalty

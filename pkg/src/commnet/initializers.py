"""Community-assignment initializers and the shared k-means kernel.

Two ways to get starting labels before running the chain: spectral
clustering on a degree-regularized Laplacian, and clustering on the
residuals of a plain probit fit. Both end in the same hand-rolled
k-means, which post-processing reuses for label alignment.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from commnet.model import CommunityAssignment, CovariateSet, Sociomatrix

_SQRT_2PI = np.sqrt(2.0 * np.pi)

IRLS_MAX_ITER = 100
IRLS_TOL = 1e-8
PROB_CLAMP = 1e-6
KMEANS_RESTARTS = 10
_KMEANS_MAX_SWEEPS = 300


@dataclass(frozen=True)
class KMeansResult:
    """Labels, centers, and the within-cluster sum of squares they achieve."""

    labels: np.ndarray
    centers: np.ndarray
    within_ss: float


def _seed_centers(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centers out proportionally to
    squared distance from the ones already chosen."""
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            # all remaining points coincide with a chosen center
            idx = rng.integers(n)
        centers[c] = points[idx]
        d2 = np.minimum(d2, ((points - centers[c]) ** 2).sum(axis=1))
    return centers


def _assign(points: np.ndarray, centers: np.ndarray):
    """Nearest-center assignment, repairing any cluster that came up empty
    by reseeding its center at the point farthest from its own."""
    n, k = points.shape[0], centers.shape[0]
    dist2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(dist2, axis=1)  # ties go to the lowest index
    contrib = dist2[np.arange(n), labels]
    repaired = False
    counts = np.bincount(labels, minlength=k)
    for c in range(k):
        if counts[c] == 0:
            # only points whose cluster can spare them are candidates
            candidates = np.where(counts[labels] > 1, contrib, -np.inf)
            farthest = int(np.argmax(candidates))
            counts[labels[farthest]] -= 1
            counts[c] += 1
            centers[c] = points[farthest]
            labels[farthest] = c
            contrib[farthest] = 0.0
            repaired = True
    return labels, contrib, repaired


def _lloyd(points: np.ndarray, centers: np.ndarray) -> KMeansResult:
    k = centers.shape[0]
    labels = None
    prev_ss = np.inf
    for _ in range(_KMEANS_MAX_SWEEPS):
        new_labels, contrib, repaired = _assign(points, centers)
        ss = float(contrib.sum())
        if not repaired:
            assert ss <= prev_ss * (1 + 1e-9) + 1e-12, "k-means objective increased"
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        prev_ss = ss
        for c in range(k):
            members = labels == c
            if members.any():
                centers[c] = points[members].mean(axis=0)
    labels, contrib, _ = _assign(points, centers)
    return KMeansResult(labels=labels, centers=centers,
                        within_ss=float(contrib.sum()))


def kmeans(points: np.ndarray, k: int, seed) -> KMeansResult:
    """Best of several Lloyd runs from k-means++ starts.

    Deterministic given the seed; equidistant points go to the
    lowest-index center, and a center that empties out is reseeded at
    the point currently farthest from its assigned center.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    n = points.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"need 1 <= k <= n, got k={k} with {n} points")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    best = None
    for stream in rng.spawn(KMEANS_RESTARTS):
        result = _lloyd(points, _seed_centers(points, k, stream))
        if best is None or result.within_ss < best.within_ss:
            best = result
    return best


def _offdiag_adjacency(y: Sociomatrix) -> np.ndarray:
    a = np.where(y.y > 0, 1.0, 0.0)
    np.fill_diagonal(a, 0.0)
    return a


def spectral_init(y: Sociomatrix, k: int, seed=0) -> CommunityAssignment:
    """Starting labels from the degree-regularized Laplacian.

    Scales the adjacency matrix by in-degree on the left and out-degree
    on the right, each ridged by the average degree, then k-means on the
    rows of the leading left singular vectors.
    """
    n = y.n
    if k > n:
        raise ValueError(f"cannot split {n} nodes into {k} communities")
    a = _offdiag_adjacency(y)
    if a.sum() == 0:
        warnings.warn("network has no edges; spectral start puts every node "
                      "in the first community")
        return CommunityAssignment(np.zeros(n, dtype=int), k)
    if k == 1:
        return CommunityAssignment(np.zeros(n, dtype=int), k)
    row_deg = a.sum(axis=1)
    col_deg = a.sum(axis=0)
    scale_r = 1.0 / np.sqrt(row_deg + row_deg.mean())
    scale_c = 1.0 / np.sqrt(col_deg + col_deg.mean())
    laplacian = scale_c[:, None] * a * scale_r[None, :]
    left, _, _ = np.linalg.svd(laplacian)
    clusters = kmeans(left[:, :k], k, seed)
    return CommunityAssignment(clusters.labels, k)


def _probit_design(y: Sociomatrix, covs: CovariateSet):
    """Vectorized plain-probit design (column-major, diagonal dropped)."""
    n = y.n
    cols = [np.ones(n * n)]
    for cov in covs.row:
        cols.append(np.tile(cov.values, n))
    for cov in covs.col:
        cols.append(np.repeat(cov.values, n))
    for cov in covs.dyad:
        cols.append(cov.values.ravel(order="F"))
    design = np.column_stack(cols)
    offdiag = ~np.eye(n, dtype=bool).ravel(order="F")
    response = np.where(y.y > 0, 1.0, 0.0).ravel(order="F")
    return design, response, offdiag


def _probit_irls(design: np.ndarray, response: np.ndarray) -> np.ndarray | None:
    """Newton scoring for probit regression; None when it fails to settle."""
    beta = np.zeros(design.shape[1])
    for _ in range(IRLS_MAX_ITER):
        # clip the linear predictor: beyond this the probit is saturated
        # anyway and the weights underflow
        eta = np.clip(design @ beta, -40.0, 40.0)
        mu = np.clip(ndtr(eta), PROB_CLAMP, 1.0 - PROB_CLAMP)
        dens = np.exp(-0.5 * eta * eta) / _SQRT_2PI
        var = mu * (1.0 - mu)
        w = dens * dens / var
        # weighted working response folded together so a vanishing density
        # never gets divided by
        wz = w * eta + dens * (response - mu) / var
        gram = design.T @ (w[:, None] * design)
        try:
            new_beta = np.linalg.solve(gram, design.T @ wz)
        except np.linalg.LinAlgError:
            return None
        if not np.isfinite(new_beta).all():
            return None
        step = np.abs(new_beta - beta).max()
        beta = new_beta
        if step < IRLS_TOL:
            return beta
    return None


def residual_init(y: Sociomatrix, covs: CovariateSet, k: int,
                  seed=0) -> CommunityAssignment:
    """Starting labels from plain-probit residuals.

    Fits edge indicators on the vectorized covariates with no community
    structure at all, reshapes the response residuals into a matrix, and
    clusters the leading left singular vectors of that matrix. When the
    probit fit does not converge the spectral start takes over.
    """
    n = y.n
    if k > n:
        raise ValueError(f"cannot split {n} nodes into {k} communities")
    design, response, offdiag = _probit_design(y, covs)
    beta = _probit_irls(design[offdiag], response[offdiag])
    if beta is None:
        warnings.warn("probit fit for the residual start did not converge; "
                      "falling back to the spectral start")
        return spectral_init(y, k, seed)
    fitted = ndtr(design @ beta)
    residual = (response - fitted).reshape(n, n, order="F")
    np.fill_diagonal(residual, 0.0)
    left, _, _ = np.linalg.svd(residual)
    clusters = kmeans(left[:, :k], k, seed)
    return CommunityAssignment(clusters.labels, k)

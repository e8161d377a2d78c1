"""Diversity measurement for view populations.

The statistic is the generalized variance: project views to a low PCA
dimension, fit a diagonal-covariance Gaussian mixture by EM, and take the
determinant of the mixture's total covariance (law of total variance:
within-component plus between-component parts). Comparing the statistic
across pipeline stages (kept round-0 views, raw round-1 views, ...) shows
whether chained generation actually spreads the population out.

The PCA basis is always fit on the union of the stages under comparison, so
per-stage numbers live in one shared coordinate system.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .datamodel import View, ViewSpec
from .nn import featurize
from .rng import derive_rng


class DiversityError(ValueError):
    pass


def pca_reduce(data: np.ndarray, n_components: int):
    """Center ``data`` and project onto the top principal directions.

    Returns ``(projection, reduced, explained_variance)`` where
    ``projection`` is (d, n_components) with orthonormal columns ordered by
    descending eigenvalue and ``explained_variance`` holds the
    corresponding covariance eigenvalues.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise DiversityError("data must be (n, d)")
    n, d = data.shape
    if n < 2:
        raise DiversityError("need at least two points")
    if not (1 <= n_components <= d):
        raise DiversityError(f"n_components must be in [1, {d}]")
    mean = data.mean(axis=0)
    centered = data - mean
    # SVD of the centered matrix; right singular vectors are the principal axes
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    eigenvalues = (singular**2) / (n - 1)
    projection = vt[:n_components].T
    reduced = centered @ projection
    return projection, reduced, eigenvalues[:n_components]


@dataclass(frozen=True, eq=False)
class GmmModel:
    """Diagonal-covariance Gaussian mixture."""

    weights: np.ndarray  # (N,)
    means: np.ndarray  # (N, d)
    diag_covs: np.ndarray  # (N, d)
    log_likelihoods: tuple[float, ...] = ()  # per-EM-iteration trace

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]


def _log_gaussian_diag(data: np.ndarray, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    diff = data - mean
    return -0.5 * (np.sum(diff * diff / var + np.log(2.0 * np.pi * var), axis=1))


def _farthest_point_indices(data: np.ndarray, k: int, rng: np.random.Generator) -> list[int]:
    first = int(rng.integers(data.shape[0]))
    chosen = [first]
    dist = np.sum((data - data[first]) ** 2, axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.sum((data - data[nxt]) ** 2, axis=1))
    return chosen


def fit_gmm(
    data: np.ndarray,
    n_components: int,
    seed: int = 0,
    max_iters: int = 200,
    tol: float = 1e-7,
    cov_floor: float = 1e-6,
) -> GmmModel:
    """EM for a diagonal-covariance mixture.

    Initialization is farthest-point seeding from a derived stream, so fits
    are reproducible. The log-likelihood trace is monotone non-decreasing up
    to 1e-8 per iteration; a larger drop raises, because EM cannot
    legitimately do that. Component variances are floored at ``cov_floor``.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise DiversityError("need an (n >= 2, d) data matrix")
    n, d = data.shape
    if not (1 <= n_components <= n):
        raise DiversityError("n_components must be in [1, n]")

    rng = derive_rng(seed, "gmm-init")
    seeds = _farthest_point_indices(data, n_components, rng)
    means = data[seeds].copy()
    global_var = np.maximum(data.var(axis=0), cov_floor)
    variances = np.tile(global_var, (n_components, 1))
    weights = np.full(n_components, 1.0 / n_components)

    trace: list[float] = []
    for _ in range(max_iters):
        log_parts = np.stack(
            [np.log(weights[j]) + _log_gaussian_diag(data, means[j], variances[j]) for j in range(n_components)]
        )  # (N, n)
        top = log_parts.max(axis=0)
        log_norm = top + np.log(np.exp(log_parts - top).sum(axis=0))
        loglik = float(log_norm.mean())
        if trace and loglik < trace[-1] - 1e-8:
            raise DiversityError(f"EM log-likelihood decreased: {trace[-1]} -> {loglik}")
        converged = bool(trace and abs(loglik - trace[-1]) < tol)
        trace.append(loglik)
        if converged:
            break
        resp = np.exp(log_parts - log_norm)  # (N, n)
        mass = resp.sum(axis=1)
        mass = np.maximum(mass, 1e-12)
        weights = mass / n
        means = (resp @ data) / mass[:, None]
        for j in range(n_components):
            diff = data - means[j]
            variances[j] = np.maximum((resp[j][:, None] * diff * diff).sum(axis=0) / mass[j], cov_floor)

    return GmmModel(
        weights=weights,
        means=means,
        diag_covs=variances,
        log_likelihoods=tuple(trace),
    )


def total_covariance(gmm: GmmModel) -> np.ndarray:
    """Law of total variance: sum of weighted component covariances plus the
    covariance of the component means."""
    grand_mean = gmm.weights @ gmm.means
    d = gmm.means.shape[1]
    cov = np.zeros((d, d))
    for w, mean, var in zip(gmm.weights, gmm.means, gmm.diag_covs):
        cov += w * np.diag(var)
        offset = mean - grand_mean
        cov += w * np.outer(offset, offset)
    return cov


def generalized_variance(gmm: GmmModel) -> float:
    """Determinant of the mixture's total covariance."""
    return float(np.linalg.det(total_covariance(gmm)))


def sample_gmm(gmm: GmmModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw from the mixture; used by the Monte-Carlo cross-checks."""
    components = rng.choice(gmm.n_components, size=n, p=gmm.weights)
    noise = rng.standard_normal((n, gmm.means.shape[1]))
    return gmm.means[components] + noise * np.sqrt(gmm.diag_covs[components])


@dataclass(frozen=True)
class StageDiversity:
    stage: str
    n_views: int
    pca_dim: int
    n_components: int
    statistic: float  # generalized variance in the shared PCA basis


def views_to_matrix(views: Sequence[View], spec: ViewSpec) -> np.ndarray:
    if not views:
        raise DiversityError("empty view list")
    return np.stack([featurize(view, spec.size) for view in views])


def diversity_report(
    stages: Mapping[str, np.ndarray],
    pca_dim: int,
    n_components: int = 3,
    seed: int = 0,
) -> list[StageDiversity]:
    """Generalized variance per stage in one shared PCA basis.

    ``stages`` maps stage name to an (n_i, d) feature matrix; the basis is
    fit on the concatenation of all stages. Stage order is preserved.
    """
    if not stages:
        raise DiversityError("no stages to compare")
    matrices = {}
    feature_dim = None
    for name, matrix in stages.items():
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise DiversityError(f"stage {name!r} is not a matrix")
        if feature_dim is None:
            feature_dim = matrix.shape[1]
        elif matrix.shape[1] != feature_dim:
            raise DiversityError("stages must share a feature dimension")
        matrices[name] = matrix

    union = np.concatenate(list(matrices.values()), axis=0)
    projection, _, _ = pca_reduce(union, pca_dim)
    center = union.mean(axis=0)

    report = []
    for name, matrix in matrices.items():
        reduced = (matrix - center) @ projection
        components = min(n_components, reduced.shape[0])
        gmm = fit_gmm(reduced, components, seed=seed)
        report.append(
            StageDiversity(
                stage=name,
                n_views=matrix.shape[0],
                pca_dim=pca_dim,
                n_components=components,
                statistic=generalized_variance(gmm),
            )
        )
    return report

"""Two-component Gaussian mixture over attribution vectors.

Standardize, seed the means with k-means++, fit by EM, then decide which
component is the clean one by the model's own loss on each cluster.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CollapseError, UsageError
from .nn import FnnModel, cross_entropy, forward

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GmmParams:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, N)
    covariances: np.ndarray  # (K, N, N), or (K, N) when diagonal
    diagonal: bool = False

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def permuted(self, order) -> "GmmParams":
        order = list(order)
        return GmmParams(
            self.weights[order], self.means[order], self.covariances[order], self.diagonal
        )


@dataclass
class PartitionResult:
    gamma: np.ndarray  # (M, K)
    assignment: np.ndarray  # (M,) component index
    clean_component: int
    cluster_losses: list[float] = field(default_factory=list)

    @property
    def quality(self) -> np.ndarray:
        """z_m: 1 for the clean subset, 0 for the noisy one."""
        return (self.assignment == self.clean_component).astype(np.int64)

    @property
    def clean_idx(self) -> np.ndarray:
        return np.flatnonzero(self.quality == 1)

    @property
    def noisy_idx(self) -> np.ndarray:
        return np.flatnonzero(self.quality == 0)


def standardize(x: np.ndarray):
    """Column-wise z-score with population std; near-constant columns are only centred."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise UsageError("standardize needs a 2-D array with at least 2 rows")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    scale = np.where(std < 1e-12, 1.0, std)
    return (x - mean) / scale, mean, scale


def kmeanspp_init(x: np.ndarray, k: int, seed: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    m = x.shape[0]
    if k < 1 or m < k:
        raise UsageError(f"k-means++ needs at least {k} samples, got {m}")
    rng = np.random.default_rng(seed)
    centres = [x[rng.integers(m)]]
    d2 = np.sum((x - centres[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            pick = rng.choice(m, p=d2 / total)
        else:
            pick = rng.integers(m)
        centres.append(x[pick])
        d2 = np.minimum(d2, np.sum((x - x[pick]) ** 2, axis=1))
    return np.array(centres)


def kmeans_refine(x: np.ndarray, centres: np.ndarray, max_iter: int = 100) -> np.ndarray:
    """Lloyd iterations from the given centres until assignments stop changing."""
    x = np.asarray(x, dtype=np.float64)
    centres = np.array(centres, dtype=np.float64)
    assign = None
    for _ in range(max_iter):
        d2 = np.sum((x[:, None, :] - centres[None, :, :]) ** 2, axis=2)
        new = np.argmin(d2, axis=1)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for k in range(len(centres)):
            members = x[assign == k]
            if len(members):
                centres[k] = members.mean(axis=0)
    return centres


def _log_gauss(x: np.ndarray, mean: np.ndarray, cov: np.ndarray, diagonal: bool) -> np.ndarray:
    diff = x - mean
    n = x.shape[1]
    if diagonal:
        return -0.5 * (n * LOG_2PI + np.sum(np.log(cov)) + np.sum(diff**2 / cov, axis=1))
    chol = np.linalg.cholesky(cov)
    sol = np.linalg.solve(chol, diff.T)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (n * LOG_2PI + logdet + np.sum(sol**2, axis=0))


def _log_joint(params: GmmParams, x: np.ndarray) -> np.ndarray:
    return np.column_stack(
        [
            np.log(params.weights[k])
            + _log_gauss(x, params.means[k], params.covariances[k], params.diagonal)
            for k in range(params.n_components)
        ]
    )


def _logsumexp(a: np.ndarray) -> np.ndarray:
    top = a.max(axis=1, keepdims=True)
    return (top + np.log(np.sum(np.exp(a - top), axis=1, keepdims=True)))[:, 0]


def responsibilities(params: GmmParams, x: np.ndarray) -> np.ndarray:
    lj = _log_joint(params, np.asarray(x, dtype=np.float64))
    return np.exp(lj - _logsumexp(lj)[:, None])


def log_likelihood(params: GmmParams, x: np.ndarray) -> float:
    return float(np.sum(_logsumexp(_log_joint(params, np.asarray(x, dtype=np.float64)))))


def _m_step(x: np.ndarray, gamma: np.ndarray, jitter: float, diagonal: bool) -> GmmParams:
    m, n = x.shape
    nk = gamma.sum(axis=0)
    weights = nk / m
    for k, w in enumerate(weights):
        if w < 1e-6:
            raise CollapseError(k, float(w))
    means = (gamma.T @ x) / nk[:, None]
    covs = []
    for k in range(gamma.shape[1]):
        diff = x - means[k]
        if diagonal:
            covs.append((gamma[:, k] @ diff**2) / nk[k] + jitter)
        else:
            c = (gamma[:, k, None] * diff).T @ diff / nk[k]
            c = 0.5 * (c + c.T)
            c[np.diag_indices(n)] += jitter
            covs.append(c)
    return GmmParams(weights, means, np.array(covs), diagonal)


def em_fit(
    x: np.ndarray,
    init_means: np.ndarray,
    max_iter: int = 200,
    tol: float = 1e-6,
    jitter: float = 1e-6,
    covariance: str = "auto",
) -> tuple[GmmParams, list[float]]:
    """Fit a Gaussian mixture by EM, starting from the given means.

    The first M-step uses hard nearest-mean assignments. ``covariance`` is
    ``"full"``, ``"diag"`` or ``"auto"``; auto switches to diagonal when the
    dimension exceeds a tenth of the sample count. Returns the parameters and
    the log-likelihood recorded after each M-step.
    """
    x = np.asarray(x, dtype=np.float64)
    init_means = np.asarray(init_means, dtype=np.float64)
    if jitter <= 0:
        raise UsageError("covariance jitter must be positive")
    m, n = x.shape
    k = init_means.shape[0]
    if covariance == "auto":
        diagonal = n > m / 10
        if diagonal:
            log.info("GMM: %d dims > %d samples / 10, using diagonal covariance", n, m)
    elif covariance in ("full", "diag"):
        diagonal = covariance == "diag"
    else:
        raise UsageError(f"unknown covariance structure {covariance!r}")

    d2 = np.sum((x[:, None, :] - init_means[None, :, :]) ** 2, axis=2)
    gamma = np.zeros((m, k))
    gamma[np.arange(m), np.argmin(d2, axis=1)] = 1.0
    params = _m_step(x, gamma, jitter, diagonal)
    trace = [log_likelihood(params, x)]
    for _ in range(max_iter):
        gamma = responsibilities(params, x)
        params = _m_step(x, gamma, jitter, diagonal)
        trace.append(log_likelihood(params, x))
        if abs(trace[-1] - trace[-2]) < tol:
            break
    return params, trace


def cluster_losses(model: FnnModel, features: np.ndarray, labels: np.ndarray, assignment: np.ndarray, k: int):
    per_sample = cross_entropy(forward(model, features).logits, labels)
    return [
        float(per_sample[assignment == c].mean()) if np.any(assignment == c) else float("inf")
        for c in range(k)
    ]


def assign_partition(
    params: GmmParams,
    x: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    model: FnnModel,
) -> PartitionResult:
    """Hard-assign by max responsibility and name the lower-loss cluster clean.

    Loss ties (within 1e-9) go to the larger cluster.
    """
    gamma = responsibilities(params, x)
    assignment = np.argmax(gamma, axis=1)
    k = params.n_components
    losses = cluster_losses(model, features, labels, assignment, k)
    sizes = np.bincount(assignment, minlength=k)
    best = min(losses)
    tied = [c for c in range(k) if losses[c] - best < 1e-9]
    clean = max(tied, key=lambda c: (sizes[c], -c))
    return PartitionResult(gamma, assignment, int(clean), losses)


def write_partition_csv(path: str | Path, result: PartitionResult, sample_ids=None) -> None:
    ids = range(len(result.assignment)) if sample_ids is None else sample_ids
    quality = result.quality
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["sample_id"] + [f"gamma_{k}" for k in range(result.gamma.shape[1])]
            + ["assigned_cluster", "quality_label"]
        )
        for i, sid in enumerate(ids):
            writer.writerow(
                [int(sid)] + [repr(float(g)) for g in result.gamma[i]]
                + [int(result.assignment[i]), int(quality[i])]
            )


def read_partition_csv(path: str | Path) -> np.ndarray:
    """Quality labels (1 = clean) ordered by sample id."""
    with open(path, newline="") as fh:
        rows = sorted((int(r["sample_id"]), int(r["quality_label"])) for r in csv.DictReader(fh))
    return np.array([q for _, q in rows], dtype=np.int64)

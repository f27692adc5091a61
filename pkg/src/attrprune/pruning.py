"""Neuron scoring for selective pruning.

The main scorer regresses the clean/noisy label on a layer's activations and
ranks neurons by |coefficient|. Four activation-statistic baselines are
provided for comparison, each turned into a noisy-vs-clean ratio score.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import UsageError

log = logging.getLogger(__name__)

BASELINE_KINDS = ("abs", "rms", "freq", "std")
METHODS = ("ours",) + BASELINE_KINDS
RIDGE_JITTER = 1e-8


@dataclass
class RegressionFit:
    coef: np.ndarray  # T, one per neuron
    intercept: float  # u, shared across neurons
    rss: float
    degenerate: bool = False


@dataclass
class SensitivityScores:
    scores: np.ndarray
    lam: float
    prune: list[int] | None = None
    alpha: float | None = None


@dataclass
class BaselineImportance:
    kind: str
    values: np.ndarray


def fit_quality_regression(activations: np.ndarray, z: np.ndarray) -> RegressionFit:
    """Least squares ``z ~ T.f + u`` via centred normal equations.

    The intercept is eliminated by centring, and ``1e-8`` is added to the
    diagonal of the centred Gram matrix so dead (all-zero) neurons and
    collinear columns still give a unique solution.
    """
    f = np.asarray(activations, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] != z.shape[0]:
        raise UsageError(f"activations {f.shape} do not match {z.shape[0]} labels")
    if f.shape[0] < 2:
        raise UsageError("regression needs at least 2 samples")
    if np.all(z == z[0]):
        log.warning("quality labels are all %g; regression carries no signal", z[0])
    f_mean, z_mean = f.mean(axis=0), z.mean()
    if np.all(f == f[0]):
        coef = np.zeros(f.shape[1])
        resid = z - z_mean
        return RegressionFit(coef, float(z_mean), float(resid @ resid), degenerate=True)
    fc, zc = f - f_mean, z - z_mean
    gram = fc.T @ fc
    gram[np.diag_indices_from(gram)] += RIDGE_JITTER
    coef = np.linalg.solve(gram, fc.T @ zc)
    intercept = float(z_mean - f_mean @ coef)
    resid = z - f @ coef - intercept
    return RegressionFit(coef, intercept, float(resid @ resid))


def sensitivity_scores(fit: RegressionFit, lam: float = 1.0) -> SensitivityScores:
    """``|T_n| + lam * |u|``.

    The intercept is shared, so the second term shifts every score equally
    and never changes the ranking.
    """
    if lam < 0:
        raise UsageError("lam must be non-negative")
    return SensitivityScores(np.abs(fit.coef) + lam * abs(fit.intercept), lam)


def prune_count(n: int, alpha: float) -> int:
    # alpha * n carries float error (0.15 * 100 == 15.000000000000002)
    return math.ceil(round(alpha * n, 9))


def select_top_alpha(scores: np.ndarray, alpha: float) -> list[int]:
    """Indices of the ``ceil(alpha * N)`` largest scores, ascending.

    Ties go to the lower index.
    """
    s = np.asarray(scores, dtype=np.float64)
    if not 0 < alpha < 1:
        raise UsageError(f"alpha must lie in (0, 1), got {alpha}")
    if s.ndim != 1 or s.size == 0:
        raise UsageError("scores must be a non-empty vector")
    k = prune_count(s.size, alpha)
    order = np.lexsort((np.arange(s.size), -s))
    return sorted(int(i) for i in order[:k])


def baseline_importance(activations: np.ndarray, kind: str) -> BaselineImportance:
    f = np.asarray(activations, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 1:
        raise UsageError("need at least one sample of activations")
    if kind == "abs":
        values = np.mean(np.abs(f), axis=0)
    elif kind == "rms":
        values = np.sqrt(np.mean(f**2, axis=0))
    elif kind == "freq":
        values = np.mean(f > 0, axis=0)
    elif kind == "std":
        if f.shape[0] < 2:
            raise UsageError("std importance needs at least 2 samples")
        values = np.sqrt(np.mean((f - f.mean(axis=0)) ** 2, axis=0))
    else:
        raise UsageError(f"unknown importance kind {kind!r}")
    return BaselineImportance(kind, values)


def baseline_score(i_noisy: np.ndarray, i_clean: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    if eps <= 0:
        raise UsageError("eps must be positive")
    return np.asarray(i_noisy, dtype=np.float64) / (np.asarray(i_clean, dtype=np.float64) + eps)


def score_neurons(
    method: str,
    activations: np.ndarray,
    z: np.ndarray,
    alpha: float,
    lam: float = 1.0,
    eps: float = 1e-9,
) -> SensitivityScores:
    """Score every neuron with ``method`` and pick the prune set."""
    z = np.asarray(z)
    if method == "ours":
        result = sensitivity_scores(fit_quality_regression(activations, z), lam)
    elif method in BASELINE_KINDS:
        noisy = baseline_importance(activations[z == 0], method).values
        clean = baseline_importance(activations[z == 1], method).values
        result = SensitivityScores(baseline_score(noisy, clean, eps), lam)
    else:
        raise UsageError(f"unknown pruning method {method!r}")
    result.alpha = alpha
    result.prune = select_top_alpha(result.scores, alpha)
    return result


def write_score_csv(path: str | Path, results: dict[str, SensitivityScores]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["neuron", "method", "score", "pruned_flag"])
        for method, res in results.items():
            pruned = set(res.prune or ())
            for n, s in enumerate(res.scores):
                writer.writerow([n, method, repr(float(s)), int(n in pruned)])

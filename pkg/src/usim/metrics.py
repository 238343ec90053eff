"""Baseline representational-similarity metrics: linear CKA, RSA, SVCCA and CCA."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import rankdata

from .core import RepresentationSet, check_paired, total_variance, VARIANCE_FLOOR
from .errors import DegenerateInput, ShapeMismatch


@dataclass(frozen=True)
class MetricConfig:
    svcca_variance_retained: float = 0.99
    cca_ridge: float = 1e-8
    rsa_distance: str = "euclidean"

    def __post_init__(self):
        if not 0 < self.svcca_variance_retained <= 1:
            raise ValueError("svcca_variance_retained must lie in (0, 1]")
        if self.cca_ridge < 0:
            raise ValueError("cca_ridge must be nonnegative")
        if self.rsa_distance != "euclidean":
            raise ValueError("only Euclidean RDMs are supported")


def _centered(r: RepresentationSet) -> np.ndarray:
    if total_variance(r) < VARIANCE_FLOOR:
        raise DegenerateInput(f"{r.name} has zero variance")
    return r.data - r.data.mean(axis=0)


def linear_cka(a: RepresentationSet, b: RepresentationSet) -> float:
    """Linear CKA, ``||Bc^T Ac||_F^2 / (||Ac^T Ac||_F ||Bc^T Bc||_F)``."""
    check_paired(a, b)
    x = _centered(a)
    y = _centered(b)
    cross = np.linalg.norm(y.T @ x) ** 2
    norm_x = np.linalg.norm(x.T @ x)
    norm_y = np.linalg.norm(y.T @ y)
    return float(min(1.0, cross / (norm_x * norm_y)))


def spearman(u, v) -> float:
    """Spearman rank correlation with average ranks for ties."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ShapeMismatch(f"lengths differ: {u.size} vs {v.size}")
    if u.size < 2:
        raise DegenerateInput("spearman needs at least 2 values")
    ru = rankdata(u) - (u.size + 1) / 2.0
    rv = rankdata(v) - (v.size + 1) / 2.0
    su, sv = ru @ ru, rv @ rv
    if su == 0 or sv == 0:
        raise DegenerateInput("spearman undefined for a constant vector")
    # one square root of the product keeps spearman(u, u) exactly 1
    return float(np.clip((ru @ rv) / np.sqrt(su * sv), -1.0, 1.0))


def rdm(r: RepresentationSet) -> np.ndarray:
    """Strict upper triangle of the Euclidean distance matrix, row-major."""
    return pdist(r.data, metric="euclidean")


def rsa(a: RepresentationSet, b: RepresentationSet) -> float:
    """Spearman correlation between the two Euclidean RDMs."""
    check_paired(a, b)
    if a.n < 4:
        raise DegenerateInput("rsa needs at least 4 samples")
    da, db = rdm(a), rdm(b)
    if np.ptp(da) == 0 or np.ptp(db) == 0:
        raise DegenerateInput("all pairwise distances are equal")
    return spearman(da, db)


def _inv_sqrt(cov: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(cov)
    evals = np.maximum(evals, np.finfo(np.float64).tiny)
    return (evecs / np.sqrt(evals)) @ evecs.T


def canonical_correlations(x: np.ndarray, y: np.ndarray, ridge: float = 1e-8) -> np.ndarray:
    """Canonical correlations of two centered matrices, descending.

    Covariances get ``ridge`` added to their diagonals before whitening.
    """
    n = x.shape[0]
    sxx = x.T @ x / n + ridge * np.eye(x.shape[1])
    syy = y.T @ y / n + ridge * np.eye(y.shape[1])
    sxy = x.T @ y / n
    m = _inv_sqrt(sxx) @ sxy @ _inv_sqrt(syy)
    rho = np.linalg.svd(m, compute_uv=False)
    return np.clip(rho, 0.0, 1.0)


def mean_cca(a: RepresentationSet, b: RepresentationSet, cfg: MetricConfig = MetricConfig()) -> float:
    """Mean canonical correlation over ``min(d_a, d_b)`` components."""
    check_paired(a, b)
    _warn_if_short(a, b)
    x = _centered(a)
    y = _centered(b)
    return float(canonical_correlations(x, y, cfg.cca_ridge).mean())


def _top_subspace(x: np.ndarray, retained: float) -> np.ndarray:
    u, s, _ = np.linalg.svd(x, full_matrices=False)
    energy = s**2
    total = energy.sum()
    if total <= 0 or s[0] <= 0:
        raise DegenerateInput("rank-0 input")
    cum = np.cumsum(energy) / total
    # smallest k reaching the retained fraction (with rounding slack)
    k = int(np.searchsorted(cum, retained - 1e-12) + 1)
    k = min(k, int(np.sum(s > s[0] * 1e-12)))
    return u[:, :k] * s[:k]


def svcca(a: RepresentationSet, b: RepresentationSet, cfg: MetricConfig = MetricConfig()) -> float:
    """SVCCA: mean CCA after truncating each side to its top singular subspace."""
    check_paired(a, b)
    _warn_if_short(a, b)
    x = _top_subspace(_centered(a), cfg.svcca_variance_retained)
    y = _top_subspace(_centered(b), cfg.svcca_variance_retained)
    return float(canonical_correlations(x, y, cfg.cca_ridge).mean())


def _warn_if_short(a: RepresentationSet, b: RepresentationSet) -> None:
    if a.n <= max(a.d, b.d):
        warnings.warn(
            f"n={a.n} does not exceed the feature count; canonical correlations are inflated",
            RuntimeWarning,
            stacklevel=3,
        )


METRICS = {
    "cka": lambda a, b, cfg: linear_cka(a, b),
    "rsa": lambda a, b, cfg: rsa(a, b),
    "svcca": svcca,
    "cca": mean_cca,
}


def compute_baselines(a: RepresentationSet, b: RepresentationSet, names=("cka", "rsa", "svcca", "cca"),
                      cfg: MetricConfig = MetricConfig()) -> dict:
    out = {}
    for name in names:
        if name not in METRICS:
            raise ValueError(f"unknown metric {name!r}; choose from {sorted(METRICS)}")
        out[name] = METRICS[name](a, b, cfg)
    return out

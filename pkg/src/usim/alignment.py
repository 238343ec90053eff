"""Alignment maps under nested predictive families and the reconstruction-based
representational similarity scores built on them.

Every fit works on centered data and recovers the bias afterwards, so scores
are invariant to translating either representation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    AFFINE,
    VARIANCE_FLOOR,
    FamilyKind,
    LinearMap,
    PredictiveFamily,
    RepresentationSet,
    check_paired,
    family as as_family,
    pad_columns,
    total_variance,
)
from .errors import ConvergenceFailure, DegenerateInput, ShapeMismatch

AFFINE_RIDGE = 1e-10


@dataclass(frozen=True)
class GradientConfig:
    """Settings for the penalized gradient-descent backend."""

    learning_rate: float = 1e-2
    max_iter: int = 2000
    rel_tol: float = 1e-9
    window: int = 20
    seed: int = 0


def _centered(x: np.ndarray):
    mean = x.mean(axis=0)
    return x - mean, mean


def fit_affine(src: RepresentationSet, dst: RepresentationSet, ridge: float = AFFINE_RIDGE) -> LinearMap:
    """Least-squares affine map from ``src`` to ``dst``.

    A ridge of ``ridge`` (relative to the per-sample covariance scale) keeps
    rank-deficient designs well posed; the system is solved as an augmented
    least-squares problem to avoid squaring the condition number.
    """
    check_paired(src, dst)
    x, mx = _centered(src.data)
    y, my = _centered(dst.data)
    n, d = x.shape
    root_n = np.sqrt(n)
    xa = np.vstack([x / root_n, np.sqrt(ridge) * np.eye(d)])
    ya = np.vstack([y / root_n, np.zeros((d, y.shape[1]))])
    w, *_ = np.linalg.lstsq(xa, ya, rcond=None)
    return LinearMap(w, my - mx @ w, 1.0, AFFINE)


def _padded_pair(src: RepresentationSet, dst: RepresentationSet):
    check_paired(src, dst)
    x, mx = _centered(src.data)
    y, my = _centered(dst.data)
    width = max(x.shape[1], y.shape[1])
    return x, mx, pad_columns(y, width), pad_columns(my[None, :], width)[0]


def _procrustes(x: np.ndarray, y: np.ndarray):
    """Orthogonal ``Q`` minimizing ``||y - pad(x) Q||_F`` and the singular values."""
    width = y.shape[1]
    xp = pad_columns(x, width)
    u, s, vt = np.linalg.svd(xp.T @ y)
    return u @ vt, s


def fit_orthogonal(src: RepresentationSet, dst: RepresentationSet) -> LinearMap:
    """Closed-form Procrustes map.

    The narrower side is zero-padded to the wider width; the returned weight
    holds the rows of the square orthogonal matrix that real inputs reach.
    """
    x, mx, y, my = _padded_pair(src, dst)
    if not np.any(x):
        raise DegenerateInput(f"{src.name} is constant; Procrustes is undefined")
    q, _ = _procrustes(x, y)
    w = q[: x.shape[1]]
    return LinearMap(w, my - mx @ w, 1.0, PredictiveFamily(FamilyKind.ORTHOGONAL))


def fit_orthogonal_scale(src: RepresentationSet, dst: RepresentationSet) -> LinearMap:
    """Procrustes rotation with the optimal uniform scale ``sum(sv) / ||src_c||_F^2``."""
    x, mx, y, my = _padded_pair(src, dst)
    norm2 = float(np.einsum("ij,ij->", x, x))
    if norm2 == 0:
        raise DegenerateInput(f"{src.name} is constant; Procrustes is undefined")
    q, s = _procrustes(x, y)
    w = q[: x.shape[1]]
    scale = float(s.sum()) / norm2
    if not scale > 0:
        # src and dst are uncorrelated; any positive scale below rounding is optimal
        scale = np.finfo(np.float64).tiny
    return LinearMap(w, my - scale * (mx @ w), scale, PredictiveFamily(FamilyKind.ORTHOGONAL_SCALE))


def _sv_floor_penalty(w: np.ndarray, floor: float, weight: float):
    u, s, vt = np.linalg.svd(w, full_matrices=False)
    gap = np.maximum(0.0, floor - s)
    value = weight * float(gap @ gap)
    grad = -2.0 * weight * (u * gap) @ vt
    return value, grad


def _converged(history: list, window: int, rel_tol: float, floor: float) -> bool:
    if len(history) <= window:
        return False
    old, new = history[-window - 1], history[-1]
    return old - new <= rel_tol * abs(old) + floor


def _descend(objective, params: np.ndarray, cfg: GradientConfig, abs_floor: float):
    """Full-batch gradient descent with step halving on any loss increase."""
    loss, grad = objective(params)
    history = [loss]
    lr = cfg.learning_rate
    for _ in range(cfg.max_iter):
        step = lr
        while True:
            trial = params - step * grad
            t_loss, t_grad = objective(trial)
            if t_loss <= loss or step < 1e-12 * cfg.learning_rate:
                break
            step *= 0.5
        if t_loss > loss:
            history.append(loss)
            return params, history, True
        params, loss, grad = trial, t_loss, t_grad
        history.append(loss)
        if _converged(history, cfg.window, cfg.rel_tol, abs_floor):
            return params, history, True
    return params, history, False


def fit_invertible_affine(
    src: RepresentationSet,
    dst: RepresentationSet,
    fam: PredictiveFamily = PredictiveFamily(FamilyKind.INVERTIBLE_AFFINE),
    cfg: GradientConfig = GradientConfig(),
    min_singular_value: float = 1e-4,
) -> LinearMap:
    """Affine map with a singular-value floor penalty, fitted by gradient descent.

    Descent starts from the least-squares solution. The penalty alone is too
    weak to lift tiny singular values far, so the result is finally projected
    onto ``sigma_min >= min_singular_value``.
    """
    check_paired(src, dst)
    if src.d != dst.d:
        raise ShapeMismatch(f"invertible maps need equal widths, got {src.d} -> {dst.d}")
    x, mx = _centered(src.data)
    y, my = _centered(dst.data)
    n, d = x.shape
    w0 = fit_affine(src, dst).weight
    var_scale = max(total_variance(dst), VARIANCE_FLOOR)

    def objective(flat):
        w = flat.reshape(d, d)
        resid = y - x @ w
        mse = float(np.einsum("ij,ij->", resid, resid)) / n
        pen, pen_grad = _sv_floor_penalty(w, fam.sv_floor, fam.sv_floor_weight)
        grad = -2.0 / n * (x.T @ resid) + pen_grad
        return mse + pen, grad.ravel()

    flat, history, ok = _descend(objective, w0.ravel().copy(), cfg, 1e-15 * var_scale)
    w = _floor_singular_values(flat.reshape(d, d), min_singular_value)
    result = LinearMap(w, my - mx @ w, 1.0, fam)
    if not ok:
        raise ConvergenceFailure(
            f"invertible-affine fit did not converge in {cfg.max_iter} iterations", last=result
        )
    return result


def _floor_singular_values(w: np.ndarray, floor: float) -> np.ndarray:
    u, s, vt = np.linalg.svd(w)
    if s.min() >= floor:
        return w
    return (u * np.maximum(s, floor)) @ vt


def fit_orthogonal_gradient(
    src: RepresentationSet,
    dst: RepresentationSet,
    fam: PredictiveFamily,
    cfg: GradientConfig = GradientConfig(),
) -> LinearMap:
    """Orthogonal(+scale) map by penalized descent on MSE + w * ||Q Q^T - I||_F^2.

    An alternative to the closed form; starts from a seeded random orthogonal matrix.
    """
    fam = as_family(fam)
    if not fam.kind.is_orthogonal:
        raise ValueError(f"{fam.name} is not an orthogonal family")
    x, mx, y, my = _padded_pair(src, dst)
    n, d_in = x.shape
    width = y.shape[1]
    rng = np.random.default_rng(cfg.seed)
    q0, _ = np.linalg.qr(rng.standard_normal((width, width)))
    with_scale = fam.kind is FamilyKind.ORTHOGONAL_SCALE
    var_scale = max(total_variance(dst), VARIANCE_FLOOR)
    eye = np.eye(d_in)

    def unpack(flat):
        w = flat[: d_in * width].reshape(d_in, width)
        log_s = flat[-1] if with_scale else 0.0
        return w, log_s

    def objective(flat):
        w, log_s = unpack(flat)
        s = np.exp(log_s)
        xw = x @ w
        resid = y - s * xw
        mse = float(np.einsum("ij,ij->", resid, resid)) / n
        gram = w @ w.T - eye
        pen = fam.ortho_penalty_weight * float(np.einsum("ij,ij->", gram, gram))
        g_w = -2.0 * s / n * (x.T @ resid) + 4.0 * fam.ortho_penalty_weight * gram @ w
        grads = [g_w.ravel()]
        if with_scale:
            grads.append([-2.0 * s / n * float(np.einsum("ij,ij->", resid, xw))])
        return mse + pen, np.concatenate(grads)

    start = [q0[:d_in].ravel()]
    if with_scale:
        start.append([0.0])
    flat, _, ok = _descend(objective, np.concatenate(start), cfg, 1e-15 * var_scale)
    w, log_s = unpack(flat)
    s = float(np.exp(log_s))
    result = LinearMap(w, my - s * (mx @ w), s, fam)
    if not ok:
        raise ConvergenceFailure(
            f"{fam.name} gradient fit did not converge in {cfg.max_iter} iterations", last=result
        )
    return result


def fit_map(
    src: RepresentationSet,
    dst: RepresentationSet,
    fam,
    backend: str = "closed",
    cfg: Optional[GradientConfig] = None,
) -> LinearMap:
    """Fit the best map in ``fam`` from ``src`` to ``dst``.

    ``backend="closed"`` uses closed forms where they exist; ``"gradient"``
    uses penalized descent for the orthogonal families. Invertible-affine
    always uses descent.
    """
    fam = as_family(fam)
    cfg = cfg or GradientConfig()
    kind = fam.kind
    if kind is FamilyKind.INVERTIBLE_AFFINE:
        return fit_invertible_affine(src, dst, fam, cfg)
    if backend == "gradient" and kind.is_orthogonal:
        return fit_orthogonal_gradient(src, dst, fam, cfg)
    if backend not in ("closed", "gradient"):
        raise ValueError(f"unknown backend {backend!r}")
    if kind is FamilyKind.ORTHOGONAL:
        return fit_orthogonal(src, dst)
    if kind is FamilyKind.ORTHOGONAL_SCALE:
        return fit_orthogonal_scale(src, dst)
    return fit_affine(src, dst)


def score_from_mse(mse: float, variance: float) -> float:
    """``1 - mse / variance`` with the constant-target convention."""
    if variance < VARIANCE_FLOOR:
        return 1.0 if mse < VARIANCE_FLOOR else 0.0
    return 1.0 - mse / variance


def directed_rep_similarity(
    src: RepresentationSet,
    dst: RepresentationSet,
    fam=AFFINE,
    backend: str = "closed",
    cfg: Optional[GradientConfig] = None,
) -> float:
    """Fraction of the total variance of ``dst`` explained by the best map from ``src``."""
    check_paired(src, dst)
    m = fit_map(src, dst, fam, backend, cfg)
    return score_from_mse(m.mse(src, dst), total_variance(dst))


def symmetric_rep_similarity(
    a: RepresentationSet,
    b: RepresentationSet,
    fam=AFFINE,
    backend: str = "closed",
    cfg: Optional[GradientConfig] = None,
) -> float:
    return min(
        directed_rep_similarity(a, b, fam, backend, cfg),
        directed_rep_similarity(b, a, fam, backend, cfg),
    )

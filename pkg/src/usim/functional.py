"""Task heads, stitchers, and the functional-similarity / usable-information scores.

Heads and stitchers are fitted full-batch. The default optimizer is L-BFGS
(scipy); ``optimizer="gd"`` selects plain gradient descent with step halving.
Both are deterministic and never accept a step that raises the loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np
from scipy.optimize import minimize

from .alignment import fit_affine, fit_orthogonal, fit_orthogonal_scale
from .core import (
    FamilyKind,
    LinearMap,
    PredictiveFamily,
    RepresentationSet,
    TaskHead,
    check_paired,
    family as as_family,
    log_softmax,
    softmax,
)
from .errors import ConvergenceFailure, DegenerateInput, MissingLabels, ShapeMismatch

NEGATIVE_INFO_FLAG = -1e-3
EVAL_FRACTION = 0.3


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    max_epochs: int = 500
    l2: float = 1e-4
    seed: int = 0
    tolerance: float = 1e-7
    optimizer: str = "lbfgs"
    init: str = "alignment"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.max_epochs <= 0:
            raise ValueError("learning_rate and max_epochs must be positive")
        if self.l2 < 0 or self.tolerance <= 0:
            raise ValueError("l2 must be nonnegative and tolerance positive")
        if self.optimizer not in ("lbfgs", "gd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.init not in ("alignment", "random"):
            raise ValueError(f"unknown init {self.init!r}")


HEAD_CONFIG = TrainConfig()
STITCH_CONFIG = TrainConfig(learning_rate=0.05)


@dataclass(frozen=True)
class FitTrace:
    losses: tuple
    converged: bool


@dataclass(frozen=True, eq=False)
class StitchResult:
    map: LinearMap
    stitched_ce: float
    native_ce: float
    stitched_accuracy: float
    native_accuracy: float
    trace: Optional[FitTrace] = field(default=None, repr=False)

    @property
    def usable_cond_info(self) -> float:
        """Stitched minus native cross-entropy, in nats; may be negative."""
        return self.stitched_ce - self.native_ce

    @property
    def negative_info(self) -> bool:
        return self.usable_cond_info < NEGATIVE_INFO_FLAG


def _minimize(objective, x0: np.ndarray, cfg: TrainConfig):
    """Minimize ``objective(x) -> (loss, grad)``; returns (x, FitTrace)."""
    if cfg.optimizer == "gd":
        return _gradient_descent(objective, x0, cfg)
    losses = [objective(x0)[0]]

    def record(xk):
        losses.append(objective(xk)[0])

    res = minimize(
        objective,
        x0,
        jac=True,
        method="L-BFGS-B",
        callback=record,
        options={"maxiter": cfg.max_epochs, "ftol": cfg.tolerance, "gtol": 1e-9, "maxcor": 20},
    )
    x = res.x
    # keep the loss history monotone even if the final line search misbehaved
    if objective(x)[0] > losses[0]:
        x = x0
    return x, FitTrace(tuple(losses), bool(res.success) or res.nit >= cfg.max_epochs)


def _gradient_descent(objective, x: np.ndarray, cfg: TrainConfig):
    loss, grad = objective(x)
    losses = [loss]
    converged = False
    for _ in range(cfg.max_epochs):
        step = cfg.learning_rate
        while True:
            trial = x - step * grad
            t_loss, t_grad = objective(trial)
            if t_loss <= loss or step < 1e-10:
                break
            step *= 0.5
        if t_loss > loss:
            converged = True
            break
        change = loss - t_loss
        x, loss, grad = trial, t_loss, t_grad
        losses.append(loss)
        if change <= cfg.tolerance * max(abs(loss), 1e-12):
            converged = True
            break
    return x, FitTrace(tuple(losses), converged)


def _require_labels(r: RepresentationSet) -> np.ndarray:
    if r.labels is None:
        raise MissingLabels(f"{r.name} has no labels")
    return r.labels


def _one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    y = np.zeros((labels.size, n_classes))
    y[np.arange(labels.size), labels] = 1.0
    return y


def _softmax_ce_grad(logits: np.ndarray, y: np.ndarray, weights: np.ndarray):
    """Weighted mean cross-entropy and its gradient with respect to the logits."""
    logp = log_softmax(logits)
    loss = -float(weights @ np.einsum("ij,ij->i", y, logp))
    g = (np.exp(logp) - y) * weights[:, None]
    return loss, g


def train_head(r: RepresentationSet, cfg: TrainConfig = HEAD_CONFIG, n_classes: Optional[int] = None) -> TaskHead:
    """Multinomial logistic regression minimizing ``CE + l2 * ||W||^2``.

    Identical (feature, label) rows are merged into weighted rows first, so the
    fit is invariant to sample order and to duplicating the data set.
    """
    return fit_head(r, cfg, n_classes)[0]


def fit_head(r: RepresentationSet, cfg: TrainConfig = HEAD_CONFIG, n_classes: Optional[int] = None):
    """:func:`train_head` returning ``(TaskHead, FitTrace)``."""
    labels = _require_labels(r)
    n_classes = n_classes or r.n_classes
    counts = np.bincount(labels, minlength=n_classes)
    present = counts[counts > 0]
    if present.size < 2:
        raise DegenerateInput("a task head needs at least two classes")
    if present.min() < 2:
        raise DegenerateInput(f"every class needs >= 2 samples, smallest has {present.min()}")

    rows, mult = np.unique(np.column_stack([r.data, labels]), axis=0, return_counts=True)
    x = rows[:, :-1]
    y = _one_hot(rows[:, -1].astype(np.int64), n_classes)
    weights = mult / mult.sum()
    d = x.shape[1]

    def objective(flat):
        w = flat[: d * n_classes].reshape(d, n_classes)
        b = flat[d * n_classes:]
        loss, g = _softmax_ce_grad(x @ w + b, y, weights)
        loss += cfg.l2 * float(np.einsum("ij,ij->", w, w))
        gw = x.T @ g + 2.0 * cfg.l2 * w
        return loss, np.concatenate([gw.ravel(), g.sum(axis=0)])

    rng = np.random.default_rng(cfg.seed)
    x0 = np.concatenate([0.01 * rng.standard_normal(d * n_classes), np.zeros(n_classes)])
    flat, trace = _minimize(objective, x0, cfg)
    return TaskHead(flat[: d * n_classes].reshape(d, n_classes), flat[d * n_classes:]), trace


def cross_entropy(head: TaskHead, r: RepresentationSet) -> float:
    """Mean ``-log p(label)`` in nats."""
    labels = _require_labels(r)
    if r.d != head.d:
        raise ShapeMismatch(f"head expects {head.d} features, {r.name} has {r.d}")
    return _ce_from_logits(head.logits(r.data), labels)


def _ce_from_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    if labels.max() >= logits.shape[1]:
        raise ShapeMismatch("label index exceeds the head's class count")
    logp = log_softmax(logits)
    return float(-logp[np.arange(labels.size), labels].mean())


def accuracy(head: TaskHead, r: RepresentationSet) -> float:
    labels = _require_labels(r)
    return float(np.mean(head.predict(r.data) == labels))


def marginal_entropy(labels) -> float:
    """Shannon entropy (nats) of the empirical label frequencies."""
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size == 0:
        raise DegenerateInput("need at least one label")
    p = np.bincount(labels) / labels.size
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def usable_information(r: RepresentationSet, head: TaskHead) -> float:
    """Marginal label entropy minus the head's cross-entropy on ``r``."""
    labels = _require_labels(r)
    return marginal_entropy(labels) - cross_entropy(head, r)


def split_indices(n: int, seed: int, eval_fraction: float = EVAL_FRACTION):
    """Seeded train/eval split, each part sorted."""
    perm = np.random.default_rng(seed).permutation(n)
    n_eval = int(round(eval_fraction * n))
    return np.sort(perm[n_eval:]), np.sort(perm[:n_eval])


def _stitch_init(src: RepresentationSet, dst: RepresentationSet, fam: PredictiveFamily, width: int, seed: int,
                 init: str):
    if init == "random":
        rng = np.random.default_rng(seed)
        if fam.kind.is_orthogonal:
            q, _ = np.linalg.qr(rng.standard_normal((width, width)))
            return q[: src.d], np.zeros(width), 1.0
        w = rng.standard_normal((src.d, width)) / np.sqrt(src.d)
        return w, np.zeros(width), 1.0
    if fam.kind is FamilyKind.ORTHOGONAL:
        m = fit_orthogonal(src, dst)
    elif fam.kind is FamilyKind.ORTHOGONAL_SCALE:
        m = fit_orthogonal_scale(src, dst)
    else:
        m = fit_affine(src, dst)
    return m.weight, m.bias, m.scale


def fit_stitcher(src: RepresentationSet, dst: RepresentationSet, head: TaskHead, fam,
                 cfg: TrainConfig = STITCH_CONFIG):
    """Train a map in ``fam`` so that ``head(map(src))`` predicts ``src.labels``.

    The objective is the head's own: cross-entropy plus ``cfg.l2`` times the
    squared norm of the composite weight ``s * W @ H``, plus the family penalty.

    ``dst`` (paired with ``src``) is only used for the alignment warm start.
    Returns ``(LinearMap, FitTrace)``.
    """
    fam = as_family(fam)
    labels = _require_labels(src)
    check_paired(src, dst)
    if dst.d != head.d:
        raise ShapeMismatch(f"head expects {head.d} features, {dst.name} has {dst.d}")
    kind = fam.kind
    if kind is FamilyKind.INVERTIBLE_AFFINE and src.d != dst.d:
        raise ShapeMismatch("invertible stitchers need equal widths")
    d_in = src.d
    width = max(d_in, dst.d) if kind.is_orthogonal else dst.d
    with_scale = kind is FamilyKind.ORTHOGONAL_SCALE

    x = src.data
    y = _one_hot(labels, head.n_classes)
    weights = np.full(x.shape[0], 1.0 / x.shape[0])
    h = np.zeros((width, head.n_classes))
    h[: head.d] = head.weight
    eye = np.eye(d_in)
    n_w = d_in * width

    def objective(flat):
        w = flat[:n_w].reshape(d_in, width)
        b = flat[n_w:n_w + width]
        s = np.exp(flat[-1]) if with_scale else 1.0
        xw = x @ w
        out = s * xw + b
        loss, g = _softmax_ce_grad(out @ h + head.bias, y, weights)
        g_out = g @ h.T
        g_w = s * (x.T @ g_out)
        grads = [None, g_out.sum(axis=0)]
        # the head's weight decay, applied to the composite predictor s * W @ H
        wh = w @ h
        decay = cfg.l2 * s * s * float(np.einsum("ij,ij->", wh, wh))
        loss += decay
        g_w = g_w + 2.0 * cfg.l2 * s * s * (wh @ h.T)
        if kind.is_orthogonal:
            gram = w @ w.T - eye
            loss += fam.ortho_penalty_weight * float(np.einsum("ij,ij->", gram, gram))
            g_w = g_w + 4.0 * fam.ortho_penalty_weight * gram @ w
        elif kind is FamilyKind.INVERTIBLE_AFFINE:
            u, sv, vt = np.linalg.svd(w)
            gap = np.maximum(0.0, fam.sv_floor - sv)
            loss += fam.sv_floor_weight * float(gap @ gap)
            g_w = g_w - 2.0 * fam.sv_floor_weight * (u * gap) @ vt
        grads[0] = g_w.ravel()
        if with_scale:
            grads.append([s * float(np.einsum("ij,ij->", g_out, xw)) + 2.0 * decay])
        return loss, np.concatenate(grads)

    w0, b0, s0 = _stitch_init(src, dst, fam, width, cfg.seed, cfg.init)
    x0 = [np.asarray(w0, dtype=np.float64).ravel(), np.asarray(b0, dtype=np.float64)]
    if with_scale:
        x0.append([np.log(s0)])
    flat, trace = _minimize(objective, np.concatenate(x0), cfg)
    w = flat[:n_w].reshape(d_in, width)
    b = flat[n_w:n_w + width]
    s = float(np.exp(flat[-1])) if with_scale else 1.0
    return LinearMap(w, b, s, fam), trace


def train_stitcher(src: RepresentationSet, dst: RepresentationSet, dst_head: TaskHead, fam,
                   cfg: TrainConfig = STITCH_CONFIG) -> StitchResult:
    """Fit a stitcher from ``src`` into ``dst_head`` and score it on a held-out split.

    The stitcher is trained on the training part of a seeded 70/30 split;
    stitched and native cross-entropy/accuracy are measured on the eval part.
    ``dst_head`` should itself have been trained on the same training rows
    (see :func:`stitch_pair`).
    """
    check_paired(src, dst)
    src_labels = _require_labels(src)
    dst_labels = _require_labels(dst)
    if not np.array_equal(src_labels, dst_labels):
        raise ShapeMismatch("src and dst must share labels")
    train, held = split_indices(src.n, cfg.seed)
    stitch, trace = fit_stitcher(src.subset(train), dst.subset(train), dst_head, fam, cfg)
    if not trace.converged:
        raise ConvergenceFailure("stitcher did not converge", last=stitch)
    src_eval, dst_eval = src.subset(held), dst.subset(held)
    stitched_logits = dst_head.logits(stitch.apply(src_eval.data))
    native_logits = dst_head.logits(dst_eval.data)
    labels = dst_eval.labels
    return StitchResult(
        map=stitch,
        stitched_ce=_ce_from_logits(stitched_logits, labels),
        native_ce=_ce_from_logits(native_logits, labels),
        stitched_accuracy=float(np.mean(np.argmax(stitched_logits, axis=1) == labels)),
        native_accuracy=float(np.mean(np.argmax(native_logits, axis=1) == labels)),
        trace=trace,
    )


def train_native_head(r: RepresentationSet, cfg: TrainConfig = HEAD_CONFIG, split_seed: Optional[int] = None,
                      n_classes: Optional[int] = None) -> TaskHead:
    """Head trained on the training part of the split used by :func:`train_stitcher`."""
    train, _ = split_indices(r.n, cfg.seed if split_seed is None else split_seed)
    return train_head(r.subset(train), cfg, n_classes=n_classes or r.n_classes)


def stitch_pair(src: RepresentationSet, dst: RepresentationSet, fam, seed: int = 0,
                head_cfg: Optional[TrainConfig] = None, stitch_cfg: Optional[TrainConfig] = None,
                dst_head: Optional[TaskHead] = None) -> StitchResult:
    """Full protocol for one direction: native head on ``dst``, then a stitcher from ``src``."""
    head_cfg = replace(head_cfg or HEAD_CONFIG, seed=seed)
    stitch_cfg = replace(stitch_cfg or STITCH_CONFIG, seed=seed)
    n_classes = max(src.n_classes, dst.n_classes)
    if dst_head is None:
        dst_head = train_native_head(dst, head_cfg, split_seed=seed, n_classes=n_classes)
    return train_stitcher(src, dst, dst_head, fam, stitch_cfg)


def directed_func_similarity(res: StitchResult, clip: bool = False) -> float:
    """Stitched accuracy over native accuracy (raw unless ``clip``)."""
    if res.native_accuracy <= 0:
        raise DegenerateInput("native accuracy is zero")
    ratio = res.stitched_accuracy / res.native_accuracy
    return min(ratio, 1.0) if clip else ratio


def symmetric_func_similarity(forward: float, backward: float) -> float:
    return min(forward, backward)


def coarsen_labels(labels, grouping) -> np.ndarray:
    """Relabel fine classes through ``grouping`` (a mapping or an index array)."""
    labels = np.asarray(labels, dtype=np.int64)
    if isinstance(grouping, Mapping):
        missing = set(np.unique(labels).tolist()) - set(grouping)
        if missing:
            raise ValueError(f"grouping does not cover labels {sorted(missing)}")
        table = np.zeros(labels.max() + 1, dtype=np.int64)
        for fine, coarse in grouping.items():
            if fine <= labels.max():
                table[fine] = coarse
    else:
        table = np.asarray(grouping, dtype=np.int64)
        if table.size <= labels.max():
            raise ValueError("grouping does not cover every label")
    return table[labels]


def contiguous_grouping(n_fine: int, fine_per_coarse: int) -> np.ndarray:
    """Fine class ``k`` goes to coarse class ``k // fine_per_coarse``."""
    if fine_per_coarse < 1 or n_fine % fine_per_coarse:
        raise ValueError(f"{n_fine} classes cannot be split into blocks of {fine_per_coarse}")
    return np.arange(n_fine) // fine_per_coarse


def probabilities(head: TaskHead, r) -> np.ndarray:
    return softmax(head.logits(r))

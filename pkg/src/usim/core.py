"""Shared data model: representation matrices, predictive families, fitted maps,
task heads and similarity reports, plus the centering/variance primitives."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateInput, InvalidData, ShapeMismatch

# Below this total variance a representation is treated as constant.
VARIANCE_FLOOR = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RepresentationSet:
    """An ``n x d`` activation matrix with optional integer labels.

    The data is copied to a read-only float64 array on construction.
    """

    data: np.ndarray
    labels: Optional[np.ndarray] = None
    name: str = "Z"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2:
            raise InvalidData(f"{self.name}: expected a 2-D matrix, got ndim={data.ndim}")
        n, d = data.shape
        if n < 2 or d < 1:
            raise InvalidData(f"{self.name}: need n >= 2 and d >= 1, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            r, c = np.argwhere(~np.isfinite(data))[0]
            raise InvalidData(f"{self.name}: non-finite entry at row {r}, col {c}")
        object.__setattr__(self, "data", _frozen(data))

        if self.labels is not None:
            raw = np.asarray(self.labels)
            if raw.ndim != 1 or raw.shape[0] != n:
                raise ShapeMismatch(
                    f"{self.name}: labels must be a vector of length {n}, got shape {raw.shape}"
                )
            labels = raw.astype(np.int64)
            if not np.array_equal(labels, raw):
                raise InvalidData(f"{self.name}: labels must be integers")
            if labels.min() < 0:
                raise InvalidData(f"{self.name}: labels must be nonnegative")
            object.__setattr__(self, "labels", _frozen(labels))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def n_classes(self) -> int:
        if self.labels is None:
            return 0
        return int(self.labels.max()) + 1

    def with_data(self, data, name: Optional[str] = None) -> "RepresentationSet":
        return RepresentationSet(data, self.labels, self.name if name is None else name)

    def with_labels(self, labels) -> "RepresentationSet":
        return RepresentationSet(self.data, labels, self.name)

    def subset(self, idx) -> "RepresentationSet":
        labels = None if self.labels is None else self.labels[idx]
        return RepresentationSet(self.data[idx], labels, self.name)


class FamilyKind(enum.Enum):
    ORTHOGONAL = "ortho"
    ORTHOGONAL_SCALE = "ortho-scale"
    INVERTIBLE_AFFINE = "invertible"
    AFFINE = "affine"

    @property
    def rank(self) -> int:
        """Capacity rank; a larger rank never fits worse."""
        return _RANKS[self]

    @property
    def is_orthogonal(self) -> bool:
        return self in (FamilyKind.ORTHOGONAL, FamilyKind.ORTHOGONAL_SCALE)

    @classmethod
    def parse(cls, value) -> "FamilyKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {
            "orthogonal": "ortho",
            "orthogonal-scale": "ortho-scale",
            "orthoscale": "ortho-scale",
            "invertible-affine": "invertible",
        }
        key = aliases.get(key, key)
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValueError(f"unknown predictive family {value!r}")


_RANKS = {
    FamilyKind.ORTHOGONAL: 0,
    FamilyKind.ORTHOGONAL_SCALE: 1,
    FamilyKind.INVERTIBLE_AFFINE: 2,
    FamilyKind.AFFINE: 3,
}


@dataclass(frozen=True)
class PredictiveFamily:
    kind: FamilyKind
    ortho_penalty_weight: float = 0.1
    sv_floor: float = 1e-3
    sv_floor_weight: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "kind", FamilyKind.parse(self.kind))
        if self.ortho_penalty_weight < 0 or self.sv_floor_weight < 0:
            raise ValueError("penalty weights must be nonnegative")
        if self.sv_floor <= 0:
            raise ValueError("sv_floor must be positive")

    @property
    def rank(self) -> int:
        return self.kind.rank

    @property
    def name(self) -> str:
        return self.kind.value

    def __lt__(self, other: "PredictiveFamily") -> bool:
        return self.rank < other.rank

    def __le__(self, other: "PredictiveFamily") -> bool:
        return self.rank <= other.rank


ORTHOGONAL = PredictiveFamily(FamilyKind.ORTHOGONAL)
ORTHOGONAL_SCALE = PredictiveFamily(FamilyKind.ORTHOGONAL_SCALE)
INVERTIBLE_AFFINE = PredictiveFamily(FamilyKind.INVERTIBLE_AFFINE)
AFFINE = PredictiveFamily(FamilyKind.AFFINE)
NESTED_FAMILIES = (ORTHOGONAL, ORTHOGONAL_SCALE, AFFINE)


def family(value) -> PredictiveFamily:
    """Coerce a name, kind or family into a :class:`PredictiveFamily`."""
    if isinstance(value, PredictiveFamily):
        return value
    return PredictiveFamily(FamilyKind.parse(value))


@dataclass(frozen=True, eq=False)
class LinearMap:
    """A fitted map ``z -> scale * (z @ weight) + bias``.

    For orthogonal families with ``d_in > d_dst`` the output is wider than the
    target; targets are compared after zero-padding on the right.
    """

    weight: np.ndarray
    bias: np.ndarray
    scale: float = 1.0
    family: PredictiveFamily = AFFINE

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 2 or b.shape[0] != w.shape[1]:
            raise ShapeMismatch(f"weight {w.shape} and bias {b.shape} disagree")
        if not self.scale > 0:
            raise InvalidData(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "weight", _frozen(w))
        object.__setattr__(self, "bias", _frozen(b))
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    def apply(self, z) -> np.ndarray:
        z = z.data if isinstance(z, RepresentationSet) else np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.d_in:
            raise ShapeMismatch(f"map expects {self.d_in} features, got {z.shape[-1]}")
        return self.scale * (z @ self.weight) + self.bias

    def mse(self, src: RepresentationSet, dst: RepresentationSet) -> float:
        """Mean over samples of the squared reconstruction error."""
        if src.n != dst.n:
            raise ShapeMismatch(f"sample counts differ: {src.n} vs {dst.n}")
        target = pad_columns(dst.data, self.d_out)
        resid = target - self.apply(src.data)
        return float(np.einsum("ij,ij->", resid, resid) / src.n)

    def orthogonality_error(self) -> float:
        """``||W W^T - I||_F`` on the row space (equals ``||W^T W - I||_F`` when square)."""
        w = self.weight
        if w.shape[0] <= w.shape[1]:
            g = w @ w.T
        else:
            g = w.T @ w
        return float(np.linalg.norm(g - np.eye(g.shape[0])))

    def min_singular_value(self) -> float:
        return float(np.linalg.svd(self.weight, compute_uv=False).min())


def pad_columns(x: np.ndarray, width: int) -> np.ndarray:
    """Zero-pad ``x`` on the right to ``width`` columns."""
    d = x.shape[1]
    if d == width:
        return x
    if d > width:
        raise ShapeMismatch(f"cannot pad {d} columns down to {width}")
    return np.hstack([x, np.zeros((x.shape[0], width - d))])


@dataclass(frozen=True, eq=False)
class TaskHead:
    """Softmax linear classifier over ``C`` classes."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 2 or b.shape[0] != w.shape[1]:
            raise ShapeMismatch(f"weight {w.shape} and bias {b.shape} disagree")
        object.__setattr__(self, "weight", _frozen(w))
        object.__setattr__(self, "bias", _frozen(b))

    @property
    def d(self) -> int:
        return self.weight.shape[0]

    @property
    def n_classes(self) -> int:
        return self.weight.shape[1]

    def logits(self, z) -> np.ndarray:
        # Wider inputs come from zero-padded stitchers: extra columns hit zero rows.
        z = z.data if isinstance(z, RepresentationSet) else np.asarray(z, dtype=np.float64)
        if z.shape[1] < self.d:
            raise ShapeMismatch(f"head expects {self.d} features, got {z.shape[1]}")
        return z[:, : self.d] @ self.weight + self.bias

    def predict_proba(self, z) -> np.ndarray:
        return softmax(self.logits(z))

    def predict(self, z) -> np.ndarray:
        # argmax returns the lowest index on ties
        return np.argmax(self.logits(z), axis=1)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


@dataclass(frozen=True)
class SimilarityReport:
    """Directed and symmetric scores for one representation pair.

    The symmetric fields are derived here and cannot be passed in.
    """

    pair: tuple[str, str]
    family: PredictiveFamily
    rep_forward: float
    rep_backward: float
    func_forward: Optional[float] = None
    func_backward: Optional[float] = None
    baselines: dict = field(default_factory=dict)
    usable_cond_info_forward: Optional[float] = None
    usable_cond_info_backward: Optional[float] = None
    rep_symmetric: float = field(init=False)
    func_symmetric: Optional[float] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "rep_symmetric", min(self.rep_forward, self.rep_backward))
        if (self.func_forward is None) != (self.func_backward is None):
            raise InvalidData("functional scores must be given in both directions or neither")
        func_sym = None
        if self.func_forward is not None:
            func_sym = min(self.func_forward, self.func_backward)
        object.__setattr__(self, "func_symmetric", func_sym)

    def to_dict(self) -> dict:
        return {
            "pair": list(self.pair),
            "family": self.family.name,
            "rep_forward": self.rep_forward,
            "rep_backward": self.rep_backward,
            "rep_symmetric": self.rep_symmetric,
            "func_forward": self.func_forward,
            "func_backward": self.func_backward,
            "func_symmetric": self.func_symmetric,
            "usable_cond_info_forward": self.usable_cond_info_forward,
            "usable_cond_info_backward": self.usable_cond_info_backward,
            "baselines": dict(sorted(self.baselines.items())),
        }


def center(r: RepresentationSet) -> RepresentationSet:
    """Subtract the column means."""
    x = r.data
    if not np.all(np.isfinite(x)):
        raise InvalidData("non-finite input")
    # Subtract until the leftover mean is at rounding level of the result itself;
    # the result is then a fixed point, so centering is idempotent bitwise.
    tol = x.shape[0] * np.finfo(np.float64).eps
    c = x
    for _ in range(32):
        mean = c.mean(axis=0)
        mean[np.abs(mean) <= tol * np.abs(c).max(axis=0)] = 0.0
        if not mean.any():
            break
        c = c - mean
    return r.with_data(c)


def total_variance(r) -> float:
    """Mean squared Euclidean deviation of the rows from the mean row."""
    x = r.data if isinstance(r, RepresentationSet) else np.asarray(r, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise InvalidData("total variance needs at least 2 samples")
    dev = x - x.mean(axis=0)
    return float(np.einsum("ij,ij->", dev, dev) / x.shape[0])


def check_paired(a: RepresentationSet, b: RepresentationSet) -> None:
    if a.n != b.n:
        raise ShapeMismatch(f"sample counts differ: {a.name} has {a.n}, {b.name} has {b.n}")


def require_variance(r: RepresentationSet) -> None:
    if total_variance(r) < VARIANCE_FLOOR:
        raise DegenerateInput(f"{r.name} has zero variance")

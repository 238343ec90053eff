"""Synthetic representation pairs with known ground-truth relationships.

``Z1`` is standard Gaussian; labels come from a random linear teacher on
``Z1`` with a logit margin enforced by rejection and equal class counts.
``Z2`` is a known transform of ``Z1`` plus optional isotropic Gaussian noise
whose standard deviation is ``noise_sigma`` times the per-feature RMS
spread of the clean ``Z2``.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .core import RepresentationSet
from .errors import InvalidSpec


class ScenarioKind(enum.Enum):
    ORTHO_TWIN = "ortho-twin"
    SCALE_TWIN = "scale-twin"
    AFFINE_TWIN = "affine-twin"
    PROJECTION = "projection"
    NUISANCE_AUGMENT = "nuisance-augment"
    NONLINEAR_WARP = "nonlinear-warp"
    INDEPENDENT_PAIR = "independent-pair"

    @classmethod
    def parse(cls, value) -> "ScenarioKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for kind in cls:
            if kind.value == key or kind.name.lower().replace("_", "-") == key:
                return kind
        compact = key.replace("-", "")
        for kind in cls:
            if kind.value.replace("-", "") == compact:
                return kind
        raise InvalidSpec(f"unknown scenario kind {value!r}")


@dataclass(frozen=True)
class ScenarioSpec:
    kind: ScenarioKind
    n: int = 600
    d: int = 8
    classes: int = 4
    fine_per_coarse: int = 1
    noise_sigma: float = 0.0
    seed: int = 0
    keep: Optional[int] = None
    extra: Optional[int] = None
    depth: Optional[int] = None
    margin: float = 1.0
    teacher_scale: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind.parse(self.kind))
        self.validate()

    def validate(self) -> None:
        k = self.kind
        if self.n < 4 or self.d < 1:
            raise InvalidSpec(f"need n >= 4 and d >= 1, got n={self.n}, d={self.d}")
        if self.classes < 2:
            raise InvalidSpec("need at least 2 classes")
        if self.n < 2 * self.classes:
            raise InvalidSpec("need at least 2 samples per class")
        if self.fine_per_coarse < 1 or self.classes % self.fine_per_coarse:
            raise InvalidSpec(f"{self.classes} classes not divisible by fine_per_coarse={self.fine_per_coarse}")
        if self.noise_sigma < 0 or self.margin < 0 or self.teacher_scale <= 0:
            raise InvalidSpec("noise_sigma and margin must be nonnegative, teacher_scale positive")
        if k is ScenarioKind.PROJECTION:
            if self.keep is None or not 1 <= self.keep < self.d:
                raise InvalidSpec(f"projection needs 1 <= keep < d, got keep={self.keep}")
        if k is ScenarioKind.NUISANCE_AUGMENT and (self.extra is None or self.extra < 1):
            raise InvalidSpec("nuisance augmentation needs extra >= 1")
        if k is ScenarioKind.NONLINEAR_WARP and (self.depth is None or self.depth < 1):
            raise InvalidSpec("nonlinear warp needs depth >= 1")

    @property
    def label(self) -> str:
        param = ""
        if self.kind is ScenarioKind.PROJECTION:
            param = f"[keep={self.keep}]"
        elif self.kind is ScenarioKind.NUISANCE_AUGMENT:
            param = f"[extra={self.extra}]"
        elif self.kind is ScenarioKind.NONLINEAR_WARP:
            param = f"[depth={self.depth}]"
        return f"{self.kind.value}{param}/noise={self.noise_sigma:g}/seed={self.seed}"

    def to_dict(self) -> dict:
        out = asdict(self)
        out["kind"] = self.kind.value
        return {k: v for k, v in out.items() if v is not None}

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise InvalidSpec(f"unknown scenario fields {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True, eq=False)
class Scenario:
    z1: RepresentationSet
    z2: RepresentationSet
    grouping: np.ndarray
    spec: ScenarioSpec
    transform: dict

    def coarse(self) -> tuple[RepresentationSet, RepresentationSet]:
        coarse = self.grouping[self.z1.labels]
        return self.z1.with_labels(coarse), self.z2.with_labels(coarse)


def random_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix via sign-corrected QR."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _teacher_sample(spec: ScenarioSpec, rng: np.random.Generator):
    d, c = spec.d, spec.classes
    teacher = rng.standard_normal((d, c))
    teacher *= spec.teacher_scale / np.linalg.norm(teacher, axis=0)
    quota = np.full(c, spec.n // c)
    quota[: spec.n % c] += 1
    counts = np.zeros(c, dtype=np.int64)
    rows, labels = [], []
    batch = max(256, 4 * spec.n)
    for _ in range(400):
        z = rng.standard_normal((batch, d))
        logits = z @ teacher
        top2 = np.sort(logits, axis=1)[:, -2:]
        ok = (top2[:, 1] - top2[:, 0]) >= spec.margin
        cls = np.argmax(logits, axis=1)
        for i in np.flatnonzero(ok):
            k = cls[i]
            if counts[k] < quota[k]:
                counts[k] += 1
                rows.append(z[i])
                labels.append(k)
        if np.all(counts == quota):
            break
    else:
        raise InvalidSpec(f"could not fill class quotas for margin {spec.margin}; lower the margin")
    order = rng.permutation(spec.n)
    return np.asarray(rows)[order], np.asarray(labels, dtype=np.int64)[order], teacher


def generate(spec: ScenarioSpec) -> Scenario:
    """Draw a labeled pair ``(Z1, Z2)`` and the fine-to-coarse grouping.

    Deterministic for a given spec (including its seed).
    """
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x5EED]))
    z1, labels, teacher = _teacher_sample(spec, rng)
    d = spec.d
    kind = spec.kind
    info: dict = {"teacher": teacher}

    if kind is ScenarioKind.ORTHO_TWIN:
        q = random_orthogonal(d, rng)
        z2 = z1 @ q
        info["q"] = q
    elif kind is ScenarioKind.SCALE_TWIN:
        q = random_orthogonal(d, rng)
        s = float(np.exp(rng.uniform(np.log(0.25), np.log(4.0))))
        z2 = s * (z1 @ q)
        info.update(q=q, scale=s)
    elif kind is ScenarioKind.AFFINE_TWIN:
        # singular values log-uniform in [0.3, 3] keep M clearly non-orthogonal
        u = random_orthogonal(d, rng)
        v = random_orthogonal(d, rng)
        sv = np.exp(rng.uniform(np.log(0.3), np.log(3.0), size=d))
        m = (u * sv) @ v.T
        b = rng.standard_normal(d)
        z2 = z1 @ m + b
        info.update(m=m, b=b)
    elif kind is ScenarioKind.PROJECTION:
        basis = random_orthogonal(d, rng)[:, : spec.keep]
        p = basis @ basis.T
        z2 = z1 @ p
        info.update(p=p, basis=basis)
    elif kind is ScenarioKind.NUISANCE_AUGMENT:
        nuisance = rng.standard_normal((spec.n, spec.extra))
        z2 = np.hstack([z1, nuisance])
    elif kind is ScenarioKind.NONLINEAR_WARP:
        h = z1
        layers = []
        for _ in range(spec.depth):
            w = rng.standard_normal((h.shape[1], 2 * d)) * np.sqrt(2.0 / h.shape[1])
            b = 0.1 * rng.standard_normal(2 * d)
            h = np.maximum(h @ w + b, 0.0)
            layers.append((w, b))
        z2 = h
        info["layers"] = layers
    elif kind is ScenarioKind.INDEPENDENT_PAIR:
        z2 = rng.standard_normal((spec.n, d))
    else:  # pragma: no cover
        raise InvalidSpec(f"unhandled scenario {kind}")

    info["clean"] = z2
    if spec.noise_sigma > 0:
        dev = z2 - z2.mean(axis=0)
        rms = np.sqrt(np.einsum("ij,ij->", dev, dev) / z2.size)
        z2 = z2 + spec.noise_sigma * rms * rng.standard_normal(z2.shape)

    grouping = np.arange(spec.classes) // spec.fine_per_coarse
    tag = spec.label
    return Scenario(
        z1=RepresentationSet(z1, labels, f"Z1<{tag}>"),
        z2=RepresentationSet(z2, labels, f"Z2<{tag}>"),
        grouping=grouping,
        spec=spec,
        transform=info,
    )

"""Experiment harness: runs the five validation experiments over scenario grids
and produces plot-ready tables plus a JSON summary.

Each pair is an independent job. Results are collected in grid order, so the
output does not depend on how many workers ran them.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import metrics as metric_lib
from .alignment import directed_rep_similarity
from .core import RepresentationSet, SimilarityReport, family as as_family
from .errors import DegenerateGrid, InvalidSpec, UsimError
from .functional import (
    HEAD_CONFIG,
    STITCH_CONFIG,
    directed_func_similarity,
    stitch_pair,
    train_native_head,
)
from .synthetic import ScenarioSpec, generate

FUNC_THRESHOLD = 0.95
DOMINANCE_SLACK = 0.03
MONOTONE_SLACK = 1e-9
# Representational-similarity bin edges for the sufficiency curve; the top bin is [0.98, 1].
SUFFICIENCY_EDGES = (-np.inf, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.98, np.inf)
EXPERIMENTS = ("asymmetry", "monotonicity", "alignment", "hierarchy", "sufficiency")

BASE_SCENARIOS = (
    {"kind": "ortho-twin"},
    {"kind": "scale-twin"},
    {"kind": "affine-twin"},
    {"kind": "projection", "keep": 4},
    {"kind": "nuisance-augment", "extra": 8},
    {"kind": "nonlinear-warp", "depth": 2},
    {"kind": "independent-pair"},
)
FUNCTIONAL_NOISE = (0.0, 0.05, 0.1, 0.15, 0.2)
CLOSED_FORM_NOISE = (0.0, 0.02, 0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class Grid:
    """Scenario grid.

    ``scenarios`` are ScenarioSpec field dicts without seed/noise. With
    ``paired_noise`` the i-th seed uses the i-th noise level; otherwise the
    grid is the full product of seeds and noise levels.
    """

    scenarios: tuple
    seeds: tuple = (0, 1, 2, 3, 4)
    noise: tuple = (0.0,)
    families: tuple = ("ortho", "ortho-scale", "affine")
    paired_noise: bool = False

    def __post_init__(self):
        if not self.scenarios:
            raise InvalidSpec("grid has no scenarios")
        if self.paired_noise and len(self.noise) != len(self.seeds):
            raise InvalidSpec("paired_noise needs one noise level per seed")
        for fam in self.families:
            as_family(fam)

    def specs(self, master_seed: int = 0) -> list:
        if self.paired_noise:
            combos = list(zip(self.seeds, self.noise))
        else:
            combos = [(s, z) for s in self.seeds for z in self.noise]
        out = []
        for template in self.scenarios:
            for s, z in combos:
                derived = int(np.random.SeedSequence([master_seed, s]).generate_state(1)[0])
                out.append(ScenarioSpec.from_dict({**template, "seed": derived, "noise_sigma": float(z)}))
        return out

    def to_dict(self) -> dict:
        return {
            "scenarios": [dict(t) for t in self.scenarios],
            "seeds": list(self.seeds),
            "noise": list(self.noise),
            "families": list(self.families),
            "paired_noise": self.paired_noise,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Grid":
        data = dict(data)
        unknown = set(data) - {"scenarios", "seeds", "noise", "families", "paired_noise"}
        if unknown:
            raise InvalidSpec(f"unknown grid fields {sorted(unknown)}")
        if "scenarios" not in data:
            raise InvalidSpec("grid needs a 'scenarios' list")
        seeds = data.get("seeds", (0, 1, 2, 3, 4))
        if isinstance(seeds, int):
            seeds = range(seeds)
        return cls(
            scenarios=tuple(dict(s) for s in data["scenarios"]),
            seeds=tuple(int(s) for s in seeds),
            noise=tuple(float(z) for z in data.get("noise", (0.0,))),
            families=tuple(data.get("families", ("ortho", "ortho-scale", "affine"))),
            paired_noise=bool(data.get("paired_noise", False)),
        )


def _hierarchy_scenarios():
    common = {"n": 1000, "d": 16, "classes": 20, "fine_per_coarse": 5}
    return tuple({**common, "kind": "nonlinear-warp", "depth": depth} for depth in (1, 2))


PRESETS = {
    "default": Grid(BASE_SCENARIOS, noise=FUNCTIONAL_NOISE, paired_noise=True),
    "closed-form": Grid(BASE_SCENARIOS, noise=CLOSED_FORM_NOISE),
    "projection": Grid(({"kind": "projection", "keep": 4},), seeds=tuple(range(10))),
    "ortho-twin": Grid(({"kind": "ortho-twin"},)),
    "hierarchy": Grid(_hierarchy_scenarios(), noise=(0.0, 0.3)),
}
DEFAULT_GRIDS = {
    "asymmetry": "default",
    "monotonicity": "closed-form",
    "alignment": "closed-form",
    "hierarchy": "hierarchy",
    "sufficiency": "default",
}


def resolve_grid(grid, experiment: str) -> Grid:
    if grid is None:
        return PRESETS[DEFAULT_GRIDS[experiment]]
    if isinstance(grid, Grid):
        return grid
    if isinstance(grid, str):
        if grid not in PRESETS:
            raise InvalidSpec(f"unknown grid preset {grid!r}; choose from {sorted(PRESETS)}")
        return PRESETS[grid]
    return Grid.from_dict(grid)


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)


@dataclass
class ExperimentResult:
    experiment: str
    grid: dict
    seed: int
    table: Table
    metrics: dict
    violations: int
    extra: dict = field(default_factory=dict)

    @property
    def pairs(self) -> int:
        return len({row["pair"] for row in self.table.rows})

    def summary(self) -> dict:
        return {
            "experiment": self.experiment,
            "grid": self.grid,
            "seed": self.seed,
            "metrics": self.metrics,
            "violations": self.violations,
        }


def worker_count() -> int:
    raw = os.environ.get("USIM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_jobs(fn: Callable, jobs: Sequence, workers: Optional[int] = None) -> list:
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _guarded(fn, spec, *args):
    """Run one pair job; failures come back as a single error record."""
    try:
        return fn(spec, *args)
    except UsimError as exc:
        return {"error": exc.code, "message": str(exc)}


def compare(
    a: RepresentationSet,
    b: RepresentationSet,
    fam,
    metric_names: Sequence[str] = (),
    functional: bool = False,
    seed: int = 0,
    metric_cfg: metric_lib.MetricConfig = metric_lib.MetricConfig(),
) -> SimilarityReport:
    """All scores for one pair under one family."""
    fam = as_family(fam)
    baselines = metric_lib.compute_baselines(a, b, tuple(metric_names), metric_cfg) if metric_names else {}
    kwargs = {}
    if functional:
        fwd = stitch_pair(a, b, fam, seed=seed)
        bwd = stitch_pair(b, a, fam, seed=seed)
        kwargs = {
            "func_forward": directed_func_similarity(fwd),
            "func_backward": directed_func_similarity(bwd),
            "usable_cond_info_forward": fwd.usable_cond_info,
            "usable_cond_info_backward": bwd.usable_cond_info,
        }
    return SimilarityReport(
        pair=(a.name, b.name),
        family=fam,
        rep_forward=directed_rep_similarity(a, b, fam),
        rep_backward=directed_rep_similarity(b, a, fam),
        baselines=baselines,
        **kwargs,
    )


def _stitch_both(z1: RepresentationSet, z2: RepresentationSet, families, seed: int) -> dict:
    """Forward and backward stitching results per family, sharing native heads."""
    head_cfg = replace(HEAD_CONFIG, seed=seed)
    n_classes = z1.n_classes
    h1 = train_native_head(z1, head_cfg, split_seed=seed, n_classes=n_classes)
    h2 = train_native_head(z2, head_cfg, split_seed=seed, n_classes=n_classes)
    out = {}
    for name in families:
        fwd = stitch_pair(z1, z2, name, seed=seed, dst_head=h2, stitch_cfg=STITCH_CONFIG)
        bwd = stitch_pair(z2, z1, name, seed=seed, dst_head=h1, stitch_cfg=STITCH_CONFIG)
        out[as_family(name).name] = (fwd, bwd)
    return out


def _func_scores(fwd, bwd) -> dict:
    f_raw, b_raw = directed_func_similarity(fwd), directed_func_similarity(bwd)
    f, b = min(f_raw, 1.0), min(b_raw, 1.0)
    return {
        "fwd_raw": f_raw,
        "bwd_raw": b_raw,
        "fwd": f,
        "bwd": b,
        "func_sym": min(f, b),
        "uci_fwd": fwd.usable_cond_info,
        "uci_bwd": bwd.usable_cond_info,
        "native_acc_1": bwd.native_accuracy,
        "native_acc_2": fwd.native_accuracy,
    }


def _rep_scores(z1, z2, name) -> dict:
    fwd = directed_rep_similarity(z1, z2, name)
    bwd = directed_rep_similarity(z2, z1, name)
    return {"rep_fwd": fwd, "rep_bwd": bwd, "rep_sym": min(fwd, bwd)}


# ---------------------------------------------------------------- pair jobs


def _job_asymmetry(spec: ScenarioSpec, families):
    sc = generate(spec)
    stitched = _stitch_both(sc.z1, sc.z2, families, spec.seed)
    return {name: _func_scores(*res) for name, res in stitched.items()}


def _job_monotonicity(spec: ScenarioSpec, families):
    sc = generate(spec)
    return {as_family(name).name: _rep_scores(sc.z1, sc.z2, name) for name in families}


def _job_alignment(spec: ScenarioSpec, families):
    sc = generate(spec)
    base = metric_lib.compute_baselines(sc.z1, sc.z2, ("cka", "rsa", "svcca", "cca"))
    out = {}
    for name in families:
        out[as_family(name).name] = {**base, **_rep_scores(sc.z1, sc.z2, name)}
    return out


def _job_hierarchy(spec: ScenarioSpec, families):
    sc = generate(spec)
    fine = _stitch_both(sc.z1, sc.z2, families, spec.seed)
    c1, c2 = sc.coarse()
    coarse = _stitch_both(c1, c2, families, spec.seed)
    out = {}
    for name in fine:
        f = _func_scores(*fine[name])
        c = _func_scores(*coarse[name])
        out[name] = {"fine": f["func_sym"], "coarse": c["func_sym"],
                     "fine_fwd": f["fwd"], "fine_bwd": f["bwd"],
                     "coarse_fwd": c["fwd"], "coarse_bwd": c["bwd"]}
    return out


def _job_sufficiency(spec: ScenarioSpec, families):
    sc = generate(spec)
    stitched = _stitch_both(sc.z1, sc.z2, families, spec.seed)
    out = {}
    for name, res in stitched.items():
        out[name] = {**_rep_scores(sc.z1, sc.z2, name), **_func_scores(*res)}
    return out


_JOBS = {
    "asymmetry": _job_asymmetry,
    "monotonicity": _job_monotonicity,
    "alignment": _job_alignment,
    "hierarchy": _job_hierarchy,
    "sufficiency": _job_sufficiency,
}


def _run_job(args):
    experiment, spec, families = args
    return _guarded(_JOBS[experiment], spec, families)


def _collect(experiment: str, grid: Grid, seed: int, columns: list, workers=None) -> Table:
    specs = grid.specs(seed)
    families = tuple(as_family(f).name for f in grid.families)
    results = _map_jobs(_run_job, [(experiment, s, families) for s in specs], workers)
    table = Table(["pair", "scenario", "noise", "family"] + columns + ["error"])
    for spec, res in zip(specs, results):
        base = {"pair": spec.label, "scenario": spec.kind.value, "noise": spec.noise_sigma}
        for name in families:
            row = dict(base, family=name)
            if "error" in res:
                row.update({c: None for c in columns}, error=res["error"])
            else:
                row.update({c: res[name].get(c) for c in columns}, error="")
            table.rows.append(row)
    return table


def _ok(rows):
    return [r for r in rows if not r["error"]]


def _percentile(values, q):
    return float(np.percentile(values, q)) if len(values) else None


# ---------------------------------------------------------------- experiments


def run_asymmetry(grid=None, seed: int = 0, workers=None) -> ExperimentResult:
    """Forward/backward stitching accuracy ratios and their difference per pair."""
    g = resolve_grid(grid, "asymmetry")
    cols = ["fwd", "bwd", "fwd_raw", "bwd_raw", "uci_fwd", "uci_bwd", "native_acc_1", "native_acc_2"]
    table = _collect("asymmetry", g, seed, cols, workers)
    table.columns.insert(table.columns.index("error"), "diff")
    for row in table.rows:
        row["diff"] = None if row["error"] else row["fwd"] - row["bwd"]
    diffs = np.array([r["diff"] for r in _ok(table.rows)])
    edges = np.linspace(-1.0, 1.0, 41)
    counts, _ = np.histogram(np.clip(diffs, -1.0, 1.0), bins=edges) if diffs.size else (np.zeros(40, int), None)
    hist = Table(["bin_lo", "bin_hi", "count"],
                 [{"bin_lo": lo, "bin_hi": hi, "count": int(c)} for lo, hi, c in zip(edges[:-1], edges[1:], counts)])
    absd = np.abs(diffs)
    metrics = {
        "rows": len(table.rows),
        "mean_diff": float(diffs.mean()) if diffs.size else None,
        "mean_abs_diff": float(absd.mean()) if diffs.size else None,
        "p95_abs_diff": _percentile(absd, 95),
        "max_abs_diff": float(absd.max()) if diffs.size else None,
        "errors": len(table.rows) - len(diffs),
    }
    return ExperimentResult("asymmetry", g.to_dict(), seed, table, metrics, metrics["errors"],
                            {"histogram": hist})


def equal_count_bins(values: np.ndarray, n_bins: int = 100) -> list:
    """Index groups of ``values`` sorted ascending, split into equal-count bins."""
    order = np.argsort(values, kind="stable")
    n_bins = min(n_bins, len(values))
    return [chunk for chunk in np.array_split(order, n_bins) if chunk.size] if n_bins else []


def run_monotonicity(grid=None, seed: int = 0, workers=None) -> ExperimentResult:
    """Closed-form scores under the nested families; counts ordering violations."""
    g = resolve_grid(grid, "monotonicity")
    table = _collect("monotonicity", g, seed, ["rep_fwd", "rep_bwd", "rep_sym"], workers)
    by_pair: dict = {}
    for row in _ok(table.rows):
        by_pair.setdefault(row["pair"], {})[row["family"]] = row
    chain = sorted({as_family(f) for f in g.families}, key=lambda f: f.rank)
    violations = 0
    checked = 0
    for fams in by_pair.values():
        present = [f.name for f in chain if f.name in fams]
        for lo, hi in zip(present, present[1:]):
            for key in ("rep_fwd", "rep_bwd", "rep_sym"):
                checked += 1
                if fams[lo][key] > fams[hi][key] + MONOTONE_SLACK:
                    violations += 1
    errors = sum(1 for r in table.rows if r["error"])

    # ribbon: pairs sorted by the widest family's symmetric score, equal-count bins
    names = [f.name for f in chain]
    pairs = [p for p in sorted(by_pair) if all(n in by_pair[p] for n in names)]
    ribbon = Table(["bin", "pairs"] + [f"{n}_mean" for n in names])
    if pairs:
        key_vals = np.array([by_pair[p][names[-1]]["rep_sym"] for p in pairs])
        for i, idx in enumerate(equal_count_bins(key_vals, 100)):
            row = {"bin": i, "pairs": int(idx.size)}
            for n in names:
                row[f"{n}_mean"] = float(np.mean([by_pair[pairs[j]][n]["rep_sym"] for j in idx]))
            ribbon.rows.append(row)
    metrics = {"pairs": len(by_pair), "comparisons": checked, "errors": errors, "slack": MONOTONE_SLACK}
    return ExperimentResult("monotonicity", g.to_dict(), seed, table, metrics, violations + errors,
                            {"ribbon": ribbon})


def _correlations(x: np.ndarray, y: np.ndarray) -> dict:
    if x.size < 3 or np.ptp(x) < 1e-9 or np.ptp(y) < 1e-9:
        return {"pearson": None, "spearman": None, "r2": None}
    pearson = float(np.corrcoef(x, y)[0, 1])
    return {"pearson": pearson, "spearman": metric_lib.spearman(x, y), "r2": pearson**2}


def run_metric_alignment(grid=None, seed: int = 0, workers=None, target_family: str = "ortho-scale",
                         strict: bool = False) -> ExperimentResult:
    """Baseline metrics against the representational score under ``target_family``.

    Correlations are ``None`` and ``degenerate_grid`` is set when either side is
    constant over the grid; with ``strict`` a :class:`DegenerateGrid` is raised instead.
    """
    g = resolve_grid(grid, "alignment")
    g = replace(g, families=(as_family(target_family).name,))
    cols = ["cka", "rsa", "svcca", "cca", "rep_fwd", "rep_bwd", "rep_sym"]
    table = _collect("alignment", g, seed, cols, workers)
    rows = _ok(table.rows)
    rep = np.array([r["rep_sym"] for r in rows])
    corr = {}
    degenerate = False
    for m in ("cka", "rsa", "svcca", "cca"):
        corr[m] = _correlations(np.array([r[m] for r in rows]), rep)
        degenerate |= corr[m]["spearman"] is None
    if degenerate and strict:
        raise DegenerateGrid("metric or score is constant over the grid; correlation undefined")
    errors = len(table.rows) - len(rows)
    metrics = {"pairs": len(rows), "family": g.families[0], "correlations": corr,
               "degenerate_grid": degenerate, "errors": errors}
    return ExperimentResult("alignment", g.to_dict(), seed, table, metrics, errors)


def run_hierarchy(grid=None, seed: int = 0, workers=None) -> ExperimentResult:
    """Fine- versus coarse-task symmetric functional similarity per pair and family."""
    g = resolve_grid(grid, "hierarchy")
    cols = ["fine", "coarse", "fine_fwd", "fine_bwd", "coarse_fwd", "coarse_bwd"]
    table = _collect("hierarchy", g, seed, cols, workers)
    table.rows.sort(key=lambda r: (r["family"], r["fine"] is None, r["fine"] or 0.0, r["pair"]))
    rows = _ok(table.rows)
    dominated = [r["coarse"] >= r["fine"] - DOMINANCE_SLACK for r in rows]
    strict = [r["coarse"] >= r["fine"] for r in rows]
    violations = len(rows) - sum(dominated)
    errors = len(table.rows) - len(rows)
    metrics = {
        "rows": len(table.rows),
        "dominance_violations": violations,
        "dominance_violation_rate": violations / len(rows) if rows else None,
        "direction_holds_rate": sum(strict) / len(rows) if rows else None,
        "slack": DOMINANCE_SLACK,
        "errors": errors,
    }
    return ExperimentResult("hierarchy", g.to_dict(), seed, table, metrics, violations + errors)


def sufficiency_curve(rows: list, threshold: float = FUNC_THRESHOLD, edges=SUFFICIENCY_EDGES) -> Table:
    """P(func_sym > threshold | rep_sym in bin) per family; empty bins give ``None``."""
    curve = Table(["family", "bin", "bin_lo", "bin_hi", "count", "high_func", "probability"])
    families = sorted({r["family"] for r in rows})
    for fam in families:
        sub = [r for r in rows if r["family"] == fam]
        rep = np.array([r["rep_sym"] for r in sub])
        high = np.array([r["func_sym"] > threshold for r in sub])
        for i, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
            mask = (rep >= lo) & (rep < hi) if i < len(edges) - 2 else rep >= lo
            count = int(mask.sum())
            curve.rows.append({
                "family": fam, "bin": i,
                "bin_lo": None if np.isinf(lo) else lo,
                "bin_hi": None if np.isinf(hi) else hi,
                "count": count,
                "high_func": int(high[mask].sum()),
                "probability": float(high[mask].mean()) if count else None,
            })
    return curve


def run_sufficiency(grid=None, seed: int = 0, workers=None, threshold: float = FUNC_THRESHOLD) -> ExperimentResult:
    """Conditional probability of high functional similarity given representational similarity."""
    g = resolve_grid(grid, "sufficiency")
    cols = ["rep_fwd", "rep_bwd", "rep_sym", "fwd", "bwd", "func_sym"]
    table = _collect("sufficiency", g, seed, cols, workers)
    rows = _ok(table.rows)
    curve = sufficiency_curve(rows, threshold)
    top = {r["family"]: r["probability"] for r in curve.rows if r["bin"] == len(SUFFICIENCY_EDGES) - 2}
    nuisance = [r for r in rows if r["scenario"] == "nuisance-augment"]
    witnesses = [r for r in nuisance if r["func_sym"] > threshold and r["rep_sym"] < 0.7]
    # sufficiency violations: high-rep rows without high func
    violations = sum(1 for r in rows if r["rep_sym"] >= 0.98 and not r["func_sym"] > threshold)
    errors = len(table.rows) - len(rows)
    metrics = {
        "rows": len(table.rows),
        "threshold": threshold,
        "top_bin_probability": top,
        "nuisance_rows": len(nuisance),
        "nuisance_non_necessity_rate": len(witnesses) / len(nuisance) if nuisance else None,
        "errors": errors,
    }
    return ExperimentResult("sufficiency", g.to_dict(), seed, table, metrics, violations + errors,
                            {"curve": curve})


RUNNERS = {
    "asymmetry": run_asymmetry,
    "monotonicity": run_monotonicity,
    "alignment": run_metric_alignment,
    "hierarchy": run_hierarchy,
    "sufficiency": run_sufficiency,
}


def run_experiment(name: str, grid=None, seed: int = 0, workers=None) -> ExperimentResult:
    if name not in RUNNERS:
        raise InvalidSpec(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
    return RUNNERS[name](grid, seed=seed, workers=workers)

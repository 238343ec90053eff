"""Command-line front end.

    usim compare A B [--family F] [--metrics cka,rsa] [--functional] [--out report.json]
    usim experiment NAME [--grid grid.json|PRESET] [--seed S] [--out-dir DIR]
    usim generate KIND OUT_DIR [--seed S] [--noise X]

Exit status: 0 on success, 2 on degenerate input, 1 on any other error.
Errors go to stderr as ``<CODE>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .core import FamilyKind
from .errors import DegenerateInput, MissingLabels, UsimError
from .io import MatrixFile, atomic_write, dumps, load_matrix, save_matrix, write_experiment
from .metrics import METRICS
from .synthetic import ScenarioKind, ScenarioSpec, generate

FAMILY_CHOICES = [k.value for k in FamilyKind]


def _metric_list(value: str):
    names = [v.strip() for v in value.split(",") if v.strip()]
    bad = [n for n in names if n not in METRICS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown metric(s) {bad}; choose from {sorted(METRICS)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="usim", description="Usable-information similarity toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    cmp_ = sub.add_parser("compare", help="score one pair of representations")
    cmp_.add_argument("a")
    cmp_.add_argument("b")
    cmp_.add_argument("--family", action="append", choices=FAMILY_CHOICES,
                      help="predictive family (repeatable; default affine)")
    cmp_.add_argument("--metrics", type=_metric_list, default=[], help="comma list of cka,rsa,svcca,cca")
    cmp_.add_argument("--functional", action="store_true", help="also train stitchers (needs labels)")
    cmp_.add_argument("--label-col", default=None, help="CSV label column (name or index)")
    cmp_.add_argument("--seed", type=int, default=0)
    cmp_.add_argument("--out", default=None, help="report path (default: stdout)")

    exp = sub.add_parser("experiment", help="run a validation experiment")
    exp.add_argument("name")
    exp.add_argument("--grid", default=None, help="grid JSON file or preset name")
    exp.add_argument("--seed", type=int, default=0)
    exp.add_argument("--out-dir", default="results")

    gen = sub.add_parser("generate", help="write a synthetic pair as raw float64 files")
    gen.add_argument("kind", choices=[k.value for k in ScenarioKind])
    gen.add_argument("out_dir")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--noise", type=float, default=0.0)
    gen.add_argument("--n", type=int, default=600)
    gen.add_argument("--d", type=int, default=8)
    gen.add_argument("--format", choices=["raw", "csv"], default="raw")
    return parser


def _fail(exc: Exception) -> int:
    code = getattr(exc, "code", "E_ERROR")
    print(f"{code}: {exc}", file=sys.stderr)
    return 2 if isinstance(exc, DegenerateInput) else 1


def cmd_compare(args) -> int:
    a = load_matrix(MatrixFile(Path(args.a), label_col=args.label_col))
    b = load_matrix(MatrixFile(Path(args.b), label_col=args.label_col))
    if args.functional and (a.labels is None or b.labels is None):
        raise MissingLabels("--functional needs labels for both inputs (see --label-col)")
    families = args.family or ["affine"]
    reports = [harness.compare(a, b, f, args.metrics, args.functional, args.seed) for f in families]
    payload = [r.to_dict() for r in reports]
    text = dumps(payload[0] if len(payload) == 1 else payload)
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _load_grid(value):
    if value is None or value in harness.PRESETS:
        return value
    path = Path(value)
    if not path.exists():
        raise FileNotFoundError(f"grid file {value!r} not found and not a preset ({', '.join(harness.PRESETS)})")
    return json.loads(path.read_text(encoding="utf-8"))


def cmd_experiment(args, parser) -> int:
    if args.name not in harness.EXPERIMENTS:
        print(f"E_USAGE: unknown experiment {args.name!r}; choose from {', '.join(harness.EXPERIMENTS)}",
              file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    result = harness.run_experiment(args.name, _load_grid(args.grid), seed=args.seed)
    write_experiment(result, args.out_dir)
    line = f"{result.experiment}: pairs={result.pairs} violations={result.violations}"
    if result.experiment == "hierarchy":
        line += f" dominance_violation_rate={result.metrics['dominance_violation_rate']:.4f}"
    print(line)
    return 0


def cmd_generate(args) -> int:
    kw = {}
    kind = ScenarioKind.parse(args.kind)
    if kind is ScenarioKind.PROJECTION:
        kw["keep"] = args.d // 2
    elif kind is ScenarioKind.NUISANCE_AUGMENT:
        kw["extra"] = args.d
    elif kind is ScenarioKind.NONLINEAR_WARP:
        kw["depth"] = 2
    sc = generate(ScenarioSpec(kind, n=args.n, d=args.d, seed=args.seed, noise_sigma=args.noise, **kw))
    out = Path(args.out_dir)
    ext = "csv" if args.format == "csv" else "f64"
    save_matrix(sc.z1, out / f"z1.{ext}")
    save_matrix(sc.z2, out / f"z2.{ext}")
    print(f"wrote {out / f'z1.{ext}'} and {out / f'z2.{ext}'}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        if args.command == "compare":
            return cmd_compare(args)
        if args.command == "experiment":
            return cmd_experiment(args, parser)
        return cmd_generate(args)
    except (UsimError, OSError, ValueError) as exc:
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())

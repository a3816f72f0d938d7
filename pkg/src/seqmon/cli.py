"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data or domain error,
3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Sequence

from seqmon import __version__
from seqmon.boundaries import (
    ConstantBoundary,
    StaircasePlan,
    TestConfig,
    boundary_from_dict,
    constant_boundary,
    fdr_bound,
    normalize_sidedness,
    staircase_boundaries,
)
from seqmon.errors import DataError, DomainError, NumericalError, ResourceError, UsageError
from seqmon.eventio import read_events
from seqmon.monitor import percentile_cap_from_history, progressive_cap, run_stream
from seqmon.simharness import (
    ClusteredSynthConfig,
    generate_clustered_events,
    history_inputs,
    levy_sweep,
    manifest,
    parse_sim_config,
    permutation_validation,
    results_to_csv,
    run_experiment_grid,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit 2; usage errors are 1 here
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _dump(doc: dict) -> str:
    return json.dumps(doc, indent=2) + "\n"


def _csv_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_boundary(args) -> int:
    cfg = TestConfig(args.alpha, args.sided, args.n, args.var)
    _emit(_dump(constant_boundary(cfg).to_dict()), args.out)
    return EXIT_OK


def load_plan(path: str, epsilon: float | None = None) -> StaircasePlan:
    """Staircase plan from JSON.

    Accepts ``period_sizes`` plus either ``variance_per_event``,
    ``incr_variances`` (cumulative ones derived), or both
    ``incr_variances`` and ``cum_variances``. Optional ``epsilon``.
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        sizes = [int(v) for v in doc["period_sizes"]]
        eps = float(epsilon if epsilon is not None else doc.get("epsilon", 0.01))
        if "variance_per_event" in doc:
            return StaircasePlan.from_event_variance(sizes, float(doc["variance_per_event"]), eps)
        incr = [float(v) for v in doc["incr_variances"]]
        if "cum_variances" in doc:
            cum = [float(v) for v in doc["cum_variances"]]
            return StaircasePlan(tuple(sizes), tuple(cum), tuple(incr), eps)
        return StaircasePlan.from_period_variances(sizes, incr, eps)
    except (OSError, ValueError, KeyError, TypeError, AttributeError) as exc:
        if isinstance(exc, (DomainError, DataError)):
            raise
        raise DataError(f"malformed plan file {path}: {exc!r}") from exc


def cmd_staircase(args) -> int:
    plan = load_plan(args.plan, args.epsilon)
    boundary = staircase_boundaries(plan, args.alpha)
    doc = boundary.to_dict()
    doc["fdr_bound"] = fdr_bound(plan, boundary.thresholds)
    doc["inflation_steps"] = boundary.inflation_steps
    _emit(_dump(doc), args.out)
    return EXIT_OK


def _monitor_boundary(args, n_events: int):
    if args.boundary:
        try:
            doc = json.loads(Path(args.boundary).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read boundary file: {exc}") from exc
        return boundary_from_dict(doc)
    horizon = args.n if args.n is not None else max(n_events, 1)
    if args.threshold is not None:
        if not args.threshold > 0:
            raise DomainError("threshold must be positive")
        return ConstantBoundary(args.threshold, normalize_sidedness(args.sided), args.alpha, horizon)
    if args.var is None:
        raise UsageError("monitor needs --boundary, --threshold, or --var (with --n)")
    return constant_boundary(TestConfig(args.alpha, args.sided, horizon, args.var))


def cmd_monitor(args) -> int:
    events = read_events(args.events, args.format)
    boundary = _monitor_boundary(args, len(events))
    report = run_stream(
        events, boundary,
        strict=not args.lenient,
        truncate=args.truncate,
        record_trajectory=bool(args.emit_trajectory),
    )
    if args.emit_trajectory:
        lines = ["n,s,threshold,flag"]
        lines += [f"{n},{s!r},{b!r},{int(f)}" for n, s, b, f in report.trajectory]
        Path(args.emit_trajectory).write_text("\n".join(lines) + "\n", encoding="utf-8")
    _emit(_dump(report.to_dict()), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
    cfg = parse_sim_config(
        text,
        replications=args.reps,
        base_seed=args.seed,
        mode=args.mode,
        check_counts=args.checks,
        methods=tuple(args.methods.split(",")) if args.methods else None,
        sidedness=args.sided,
    )
    if args.seed is None and "seed" not in {ln.split("=", 1)[0].strip() for ln in text.splitlines() if "=" in ln}:
        raise UsageError("simulate needs an explicit seed (--seed or seed= in the config)")
    results = run_experiment_grid(cfg)
    _emit(results_to_csv(results), args.out)
    man_path = args.manifest or (f"{args.out}.manifest.json" if args.out else None)
    if man_path:
        # the CSV schema is fixed, so the detected-only savings average travels here
        detected_only = [
            {"method": r.method, "effect": r.effect, "check_count": r.check_count,
             "mean_savings_detected": r.mean_savings_detected}
            for r in results
        ]
        doc = manifest(cfg, {"mean_savings_detected": detected_only})
        Path(man_path).write_text(_dump(doc), encoding="utf-8")
    return EXIT_OK


def _parse_synth(path: str) -> ClusteredSynthConfig:
    fields = ClusteredSynthConfig.__dataclass_fields__
    kwargs = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (p.strip() for p in line.partition("="))
        if not sep or key not in fields:
            raise DataError(f"{path} line {lineno}: unknown or malformed entry {raw!r}")
        try:
            kwargs[key] = int(value) if fields[key].type in ("int", int) else float(value)
        except ValueError as exc:
            raise DataError(f"{path} line {lineno}: {exc}") from exc
    return ClusteredSynthConfig(**kwargs)


def cmd_validate(args) -> int:
    if args.synth:
        synth = _parse_synth(args.synth)
        history = generate_clustered_events(synth, args.seed, subject_prefix="h")
        current = generate_clustered_events(synth, args.seed + 1)
    else:
        if not (args.events and args.history):
            raise UsageError("validate needs --synth, or both --events and --history")
        history = read_events(args.history)
        current = read_events(args.events)
    cap = math.inf
    if args.cap_percentile is not None:
        cap = percentile_cap_from_history(history, args.cap_percentile)
        history = progressive_cap(history, cap)
        current = progressive_cap(current, cap)
    horizon, variance = history_inputs(history, args.seed, robust=args.variance == "robust")
    cfg = TestConfig(args.alpha, args.sided, horizon, variance)
    rate = permutation_validation(current, args.reps, args.seed, cfg, args.method)
    se = math.sqrt(rate * (1 - rate) / args.reps)
    doc = {
        "method": args.method,
        "variance_method": args.variance,
        "detection_rate": rate,
        "std_error": se,
        "ci95": [max(0.0, rate - 1.96 * se), min(1.0, rate + 1.96 * se)],
        "replications": args.reps,
        "seed": args.seed,
        "horizon_events": horizon,
        "variance_scaled": variance,
        "cap": None if math.isinf(cap) else cap,
        "events_monitored": min(len(current), horizon),
    }
    _emit(_dump(doc), args.out)
    return EXIT_OK


def cmd_levy_check(args) -> int:
    rows = levy_sweep(args.max_n)
    doc = {
        "max_n": args.max_n,
        "cases": len(rows),
        "violations": sum(1 for _, _, lhs, rhs in rows if lhs > rhs),
        "max_ratio": max((lhs / rhs for _, _, lhs, rhs in rows if rhs > 0), default=0.0),
    }
    _emit(_dump(doc), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="seqmon", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, sided_default="one"):
        sp.add_argument("--alpha", type=float, default=0.05)
        sp.add_argument("--sided", default=sided_default, help="one | two")
        sp.add_argument("--out", help="write output here instead of stdout")

    b = sub.add_parser("boundary", help="constant alerting threshold")
    common(b)
    b.add_argument("--n", type=int, required=True, help="horizon: expected number of events")
    b.add_argument("--var", type=float, required=True, help="per-event variance of S_N")
    b.set_defaults(func=cmd_boundary)

    s = sub.add_parser("staircase", help="staircase thresholds from a plan file")
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--plan", required=True, help="JSON plan file")
    s.add_argument("--epsilon", type=float, help="inflation step (overrides plan)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_staircase)

    m = sub.add_parser("monitor", help="run a boundary over an event file")
    common(m)
    m.add_argument("--events", required=True)
    m.add_argument("--format", choices=("csv", "ndjson"))
    m.add_argument("--boundary", help="boundary JSON document")
    m.add_argument("--threshold", type=float, help="explicit constant threshold")
    m.add_argument("--n", type=int, help="horizon (default: number of events)")
    m.add_argument("--var", type=float)
    m.add_argument("--lenient", action="store_true", help="warn instead of failing on unordered timestamps")
    m.add_argument("--truncate", action="store_true", help="ignore events past the horizon")
    m.add_argument("--emit-trajectory", metavar="PATH", help="write per-step n,s,threshold,flag CSV")
    m.set_defaults(func=cmd_monitor)

    sim = sub.add_parser("simulate", help="Monte-Carlo grid of detection rates and savings")
    sim.add_argument("--config", help="key=value scenario file")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--reps", type=int)
    sim.add_argument("--mode", choices=("continuous", "discrete"))
    sim.add_argument("--checks", type=_csv_ints, help="check counts for discrete mode, e.g. 14,28")
    sim.add_argument("--methods", help="comma-separated method names")
    sim.add_argument("--sided", help="one | two")
    sim.add_argument("--out")
    sim.add_argument("--manifest", help="manifest JSON path (default: <out>.manifest.json)")
    sim.set_defaults(func=cmd_simulate)

    v = sub.add_parser("validate", help="permutation false-detection rate")
    common(v)
    v.add_argument("--seed", type=int, required=True)
    v.add_argument("--reps", type=int, default=10_000)
    v.add_argument("--synth", help="key=value clustered synthetic data config")
    v.add_argument("--events", help="event file for the monitored period")
    v.add_argument("--history", help="event file for the preceding period")
    v.add_argument("--variance", choices=("robust", "iid"), default="robust")
    v.add_argument("--cap-percentile", type=float)
    v.add_argument("--method", default="yeast")
    v.set_defaults(func=cmd_validate)

    lv = sub.add_parser("levy-check", help="exhaustive reflection-inequality check")
    lv.add_argument("--max-n", type=int, default=12)
    lv.add_argument("--out")
    lv.set_defaults(func=cmd_levy_check)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"seqmon: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"seqmon: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, DomainError, ResourceError, OSError) as exc:
        print(f"seqmon: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

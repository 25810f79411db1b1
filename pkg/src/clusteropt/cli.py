"""Command line entry point: ``validate``, ``run``, ``compare`` and ``sweep``.

Exit codes are 0 on success, 2 for unreadable scenario text (and bad
command lines), 3 for scenario validation failures and 4 for I/O errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from .controllers import controller_kind, run
from .metrics import MetricsReport
from .report import (
    comparison_dict,
    comparison_table,
    dumps_fixed,
    fmt,
    report_for,
    summary_json,
    sweep_rows,
    sweep_table,
    trace_csv,
)
from .scenario import (
    ScenarioConfig,
    ScenarioParseError,
    ScenarioValidationError,
    load_scenario,
    shipped_scenario_path,
    shipped_scenarios,
)

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_IO = 4

ARMS = ("ai", "reactive")


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def resolve_scenario(name: str) -> Path:
    """A filesystem path, or the name of a bundled scenario when no such file exists."""
    p = Path(name)
    if p.exists() or name not in shipped_scenarios():
        return p
    return shipped_scenario_path(name)


def _load(name: str, ticks: int | None = None) -> ScenarioConfig:
    path = resolve_scenario(name)
    try:
        sc = load_scenario(path)
    except ScenarioParseError as e:
        raise _Fail(EXIT_PARSE, f"{path}: parse error: {e}") from None
    except ScenarioValidationError as e:
        lines = "\n".join(f"  {i}" for i in e.issues)
        raise _Fail(EXIT_VALIDATION, f"{path}: {len(e.issues)} validation error(s)\n{lines}") from None
    except UnicodeDecodeError as e:
        raise _Fail(EXIT_PARSE, f"{path}: not UTF-8 text: {e}") from None
    except OSError as e:
        raise _Fail(EXIT_IO, f"{path}: {e.strerror or e}") from None
    return sc.with_ticks(ticks) if ticks is not None else sc


def _write(out: Path, files: dict[str, str]) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            (out / name).write_text(text, encoding="utf-8", newline="")
    except OSError as e:
        raise _Fail(EXIT_IO, f"cannot write to {out}: {e.strerror or e}") from None


def execute_arm(scenario: ScenarioConfig, kind: str, seed: int | None = None, with_files: bool = True):
    """One controller over one scenario. Returns (report, trace csv, summary json).

    Only plain values cross the process boundary, so results do not depend
    on whether arms run in this process or a worker.
    """
    trace = run(scenario, kind, seed=seed)
    report = report_for(trace, scenario.evaluation)
    if not with_files:
        return report, None, None
    summary = summary_json(trace, report) if report is not None else _empty_summary(trace)
    return report, trace_csv(trace), summary


def _empty_summary(trace) -> str:
    return dumps_fixed({
        "scenario": trace.metadata.get("scenario"),
        "controller": trace.kind,
        "seed": trace.seed,
        "ticks": 0,
        "metrics": None,
    }) + "\n"


def _map(jobs: int, calls: list[tuple]) -> list:
    if jobs <= 1 or len(calls) <= 1:
        return [execute_arm(*c) for c in calls]
    with ProcessPoolExecutor(max_workers=min(jobs, len(calls))) as pool:
        futures = [pool.submit(execute_arm, *c) for c in calls]
        return [f.result() for f in futures]


def cmd_validate(args) -> int:
    sc = _load(args.scenario)
    w = sc.world
    print(f"ok: {sc.name} ({len(w.clusters)} clusters, {len(w.workloads)} workloads, {sc.ticks} ticks, seed {sc.seed})")
    return EXIT_OK


def cmd_run(args) -> int:
    sc = _load(args.scenario, args.ticks)
    kind = controller_kind(args.controller)
    report, csv_text, summary = execute_arm(sc, kind, args.seed)
    short = "ai" if kind == "ai_driven" else "reactive"
    _write(Path(args.out), {f"trace_{short}.csv": csv_text, f"summary_{short}.json": summary})
    if report is not None:
        for key, value in report.as_dict().items():
            print(f"{key}: {fmt(value)}")
    return EXIT_OK


def _require_reports(ai: MetricsReport | None, base: MetricsReport | None) -> None:
    if ai is None or base is None:
        raise _Fail(EXIT_VALIDATION, "comparison needs at least one tick")


def cmd_compare(args) -> int:
    sc = _load(args.scenario, args.ticks)
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    (ai, ai_csv, ai_sum), (base, base_csv, base_sum) = _map(args.jobs, [(sc, k) for k in ARMS])
    _require_reports(ai, base)
    meta = {"scenario": sc.name, "seed": sc.seed, "ticks": sc.ticks}
    table = comparison_table(ai, base, f"{sc.name} (seed {sc.seed}, {sc.ticks} ticks)")
    _write(Path(args.out), {
        "trace_ai.csv": ai_csv,
        "trace_reactive.csv": base_csv,
        "summary_ai.json": ai_sum,
        "summary_reactive.json": base_sum,
        "comparison.txt": table,
        "comparison.json": dumps_fixed(comparison_dict(ai, base, meta)) + "\n",
    })
    sys.stdout.write(table)
    return EXIT_OK


def cmd_sweep(args) -> int:
    sc = _load(args.scenario, args.ticks)
    calls = [(sc, k, seed, False) for seed in args.seeds for k in ARMS]
    results = _map(args.jobs, calls)
    per_seed = []
    for i, seed in enumerate(args.seeds):
        ai, base = results[2 * i][0], results[2 * i + 1][0]
        _require_reports(ai, base)
        per_seed.append((seed, ai, base))
    rows = sweep_rows(per_seed)
    files = {
        f"comparison_seed{seed}.json": dumps_fixed(
            comparison_dict(ai, base, {"scenario": sc.name, "seed": seed, "ticks": sc.ticks})
        ) + "\n"
        for seed, ai, base in per_seed
    }
    table = sweep_table(rows, f"{sc.name} ({len(args.seeds)} seeds, {sc.ticks} ticks)")
    files["sweep.txt"] = table
    files["sweep.json"] = dumps_fixed({"scenario": sc.name, "ticks": sc.ticks, "seeds": list(args.seeds), "rows": rows}) + "\n"
    _write(Path(args.out), files)
    sys.stdout.write(table)
    return EXIT_OK


def _seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not seeds or any(s < 0 or s >= 2**64 for s in seeds):
        raise argparse.ArgumentTypeError("need at least one seed in [0, 2^64)")
    return seeds


def _nonneg(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clusteropt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, out=True):
        p.add_argument("--scenario", required=True, help="scenario file, or the name of a bundled scenario")
        if out:
            p.add_argument("--out", required=True, help="output directory")
            p.add_argument("--ticks", type=_nonneg, help="override the scenario's tick count")

    p = sub.add_parser("validate", help="check a scenario file")
    common(p, out=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="simulate one controller")
    common(p)
    p.add_argument("--controller", choices=ARMS, default="ai")
    p.add_argument("--seed", type=_nonneg, help="override the scenario seed")
    p.set_defaults(func=cmd_run)

    jobs = min(2, os.cpu_count() or 1)
    p = sub.add_parser("compare", help="run both controllers on the same scenario and seed")
    common(p)
    p.add_argument("--seed", type=_nonneg, help="override the scenario seed")
    p.add_argument("--jobs", type=int, default=jobs, help="worker processes (1 runs serially)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="compare across several seeds")
    common(p)
    p.add_argument("--seeds", type=_seeds, required=True, help="comma-separated seeds")
    p.add_argument("--jobs", type=int, default=jobs, help="worker processes (1 runs serially)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _Fail as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())

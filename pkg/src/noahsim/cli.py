"""``noahsim`` command line: run, sweep, verify, scenario.

Exit codes: 0 success, 1 failed checks or failed sweep points, 2 bad input
(scenario file, flags), 3 a run aborted at runtime.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path
from typing import Optional

from . import __version__
from .engine import GENERATOR_ID, HASH_ID, SimulationError
from .experiments import SweepSpec, run_sweep
from .metrics import SUMMARY_COLUMNS, summarize
from .scenario import EVALUATION_SCHEDULERS, Scenario, ScenarioError, dumps, load, parse_scheduler
from .simulation import run_scenario
from .verify import run_battery

OUTPUT_ENV = "NOAHSIM_OUTPUT_DIR"
DEFAULT_OUTPUT = "results"

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


def parse_lambdas(text: str) -> list[float]:
    """``"50"``, ``"10,30,50"``, ``"1:80"`` (inclusive) or ``"0:80:10"``; parts may be mixed."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ":" in part:
                bits = [float(b) for b in part.split(":")]
                if len(bits) not in (2, 3):
                    raise ValueError
                lo, hi = bits[0], bits[1]
                step = bits[2] if len(bits) == 3 else 1.0
                if step <= 0 or hi < lo:
                    raise ValueError
                n = int(round((hi - lo) / step))
                out.extend(lo + i * step for i in range(n + 1) if lo + i * step <= hi + 1e-9)
            else:
                out.append(float(part))
        except ValueError:
            raise UsageError(f"--lambda: cannot parse {part!r} (use 50, 10,30 or 1:80[:step])") from None
    if not out or any(x < 0 for x in out):
        raise UsageError("--lambda: need at least one non-negative rate")
    return out


def parse_ints(text: str, flag: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise UsageError(f"{flag}: empty list")
    return vals


def _load_scenario(path: Optional[str]) -> Scenario:
    return load(path) if path else Scenario()


def _apply_common(sc: Scenario, args) -> Scenario:
    if getattr(args, "out", None):
        sc.run.output_dir = args.out
    if getattr(args, "trace", False):
        sc.run.trace = True
    return sc


def _output_root(sc: Scenario) -> Path:
    return Path(sc.run.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


def _stamp(kind: str, sc: Scenario, extra: dict) -> str:
    key = json.dumps({"kind": kind, "scenario": sc.digest(), **extra}, sort_keys=True)
    return f"{kind}-{hashlib.sha256(key.encode()).hexdigest()[:12]}"


def _write_metadata(outdir: Path, sc: Scenario, extra: dict) -> None:
    meta = {
        "version": __version__,
        "scenario_sha256": sc.digest(),
        "random_generator": GENERATOR_ID,
        "function_hash": HASH_ID,
        "event_digest": "sha256",
        **extra,
    }
    (outdir / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    (outdir / "scenario.toml").write_text(dumps(sc))


def _print_rows(rows, fh=None) -> None:
    w = csv.DictWriter(fh or sys.stdout, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)


def cmd_run(args) -> int:
    sc = _apply_common(_load_scenario(args.scenario), args)
    if args.scheduler:
        sc = sc.with_overrides(scheduler=args.scheduler)
    if args.lam is not None:
        lams = parse_lambdas(args.lam)
        if len(lams) != 1:
            raise UsageError("run takes a single --lambda value; use sweep for grids")
        sc = sc.with_overrides(peak_rate=lams[0])
    if args.seed is not None:
        sc = sc.with_overrides(seed=args.seed)
    seed = sc.run.seeds[0]
    outdir = _output_root(sc) / _stamp("run", sc, {"seed": seed})
    outdir.mkdir(parents=True, exist_ok=True)
    _write_metadata(outdir, sc, {"command": "run", "seed": seed})
    try:
        if sc.run.trace:
            with open(outdir / "trace.jsonl", "w") as fh:
                m = run_scenario(sc, seed, trace=fh)
        else:
            m = run_scenario(sc, seed)
    except (SimulationError, ValueError) as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    row = summarize(m)
    with open(outdir / "summary.csv", "w", newline="") as fh:
        _print_rows([row], fh)
    _print_rows([row])
    print(f"# output: {outdir}", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args) -> int:
    sc = _apply_common(_load_scenario(args.scenario), args)
    lams = parse_lambdas(args.lam) if args.lam else list(range(1, 81))
    scheds = [s.strip() for s in (args.schedulers or ",".join(EVALUATION_SCHEDULERS)).split(",") if s.strip()]
    for s in scheds:
        parse_scheduler(s)  # fail fast with exit 2
    seeds = parse_ints(args.seeds, "--seeds") if args.seeds else list(sc.run.seeds)
    sc.run.seeds = seeds
    if args.parallel < 1:
        raise UsageError("--parallel must be >= 1")
    spec = SweepSpec(lambda_grid=lams, schedulers=scheds, seeds=seeds, base=sc)
    grid = {"lambda": lams, "schedulers": scheds, "seeds": seeds}
    outdir = _output_root(sc) / _stamp("sweep", sc, grid)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_metadata(outdir, sc, {"command": "sweep", **grid})
    trace_dir = None
    if sc.run.trace:
        trace_dir = outdir / "traces"
        trace_dir.mkdir(exist_ok=True)
    total = len(spec.points())
    done = [0]

    def progress(row):
        done[0] += 1
        if not args.quiet:
            status = "ERROR " + row["error"] if row["error"] else f"resp={row['mean_response_s']}"
            print(f"[{done[0]}/{total}] lambda={row['lambda']} {row['scheduler']} seed={row['seed']} {status}",
                  file=sys.stderr)

    rows = run_sweep(spec, str(outdir / "results.csv"), parallel=args.parallel,
                     trace_dir=str(trace_dir) if trace_dir else None, progress=progress)
    failed = sum(1 for r in rows if r["error"])
    print(f"{len(rows)} rows, {failed} failed -> {outdir / 'results.csv'}")
    return EXIT_OK if failed == 0 else EXIT_FAIL


def cmd_verify(args) -> int:
    results = run_battery(quick=args.quick, seed=args.seed)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_FAIL


def cmd_scenario(args) -> int:
    sc = _load_scenario(args.scenario)
    sys.stdout.write(dumps(sc))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="noahsim", description="Serverless scheduling simulator.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("scenario", nargs="?", help="scenario TOML file (default: built-in evaluation scenario)")
        sp.add_argument("--out", help=f"output root (default: ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
        sp.add_argument("--trace", action="store_true", help="write a JSON-lines event trace")

    r = sub.add_parser("run", help="one simulation run")
    common(r)
    r.add_argument("--scheduler", help="ow, noncoop or noah:<alpha> (e.g. noah:10ms)")
    r.add_argument("--lambda", dest="lam", help="peak arrival rate per class (1/s)")
    r.add_argument("--seed", type=int)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="grid of runs over lambda x scheduler x seed")
    common(s)
    s.add_argument("--lambda", dest="lam", help="rates, e.g. 1:80 or 10,30,50 (default 1:80)")
    s.add_argument("--schedulers", help=f"comma list (default {','.join(EVALUATION_SCHEDULERS)})")
    s.add_argument("--seeds", help="comma list of seeds (default: scenario run.seeds)")
    s.add_argument("--parallel", type=int, default=1, help="concurrent runs")
    s.add_argument("--quiet", action="store_true", help="no per-run progress on stderr")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="analytic verification battery")
    v.add_argument("--quick", action="store_true", help="fewer samples, looser tolerances")
    v.add_argument("--seed", type=int, default=1)
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("scenario", help="print the effective scenario as TOML")
    c.add_argument("scenario", nargs="?")
    c.set_defaults(func=cmd_scenario)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ScenarioError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SimulationError as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

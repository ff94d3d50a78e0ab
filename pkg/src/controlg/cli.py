"""Command line entry points: simulate, sweep, report, verify.

Exit codes: 0 ok, 1 usage, 2 validation (bad config or trace), 3 divergence,
4 verification failure.  ``CONTROLG_THREADS`` caps sweep parallelism.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import parse_config
from .errors import ConfigError, ContractViolation
from .trace_io import TraceFormatError, collect_traces, report

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_DIVERGENCE, EXIT_VERIFY = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_seed_range(text: str) -> list[int]:
    """``"3"`` -> [3]; ``"0..4"`` -> [0, 1, 2, 3, 4] (inclusive); ``"1,5"`` -> [1, 5]."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = (int(x) for x in part.split("..", 1))
            if hi < lo:
                raise ValueError(f"empty seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        elif part:
            seeds.append(int(part))
    if not seeds or any(s < 0 for s in seeds):
        raise ValueError(f"bad seed list {text!r}")
    return seeds


def thread_cap(default: int | None = None) -> int:
    raw = os.environ.get("CONTROLG_THREADS", "")
    if raw.strip():
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"CONTROLG_THREADS must be a positive integer, got {raw!r}") from None
        if n < 1:
            raise ConfigError(f"CONTROLG_THREADS must be a positive integer, got {raw!r}")
        return n
    return default or os.cpu_count() or 1


def _simulate_to(cfg, out: Path) -> dict:
    from .sim_engine import run_simulation

    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".part")
    with open(tmp, "w", encoding="utf-8", newline="\n") as handle:
        s = run_simulation(cfg, handle)
    os.replace(tmp, out)
    return {"policy": s.policy, "seed": s.seed, "diverged": s.diverged, "error": s.error,
            "blocks": s.blocks, "out": str(out)}


def _sweep_job(args) -> dict:
    cfg, out = args
    return _simulate_to(cfg, Path(out))


def cmd_simulate(ns) -> int:
    cfg = parse_config(ns.config).with_overrides(seed=ns.seed, policy=ns.policy)
    res = _simulate_to(cfg, Path(ns.out))
    if res["diverged"]:
        print(f"run diverged: {res['error']}", file=sys.stderr)
        return EXIT_DIVERGENCE
    print(json.dumps(res, sort_keys=True))
    return EXIT_OK


def cmd_sweep(ns) -> int:
    base = parse_config(ns.config)
    try:
        seeds = parse_seed_range(ns.seeds)
    except ValueError as exc:
        print(f"sweep: {exc}", file=sys.stderr)
        return EXIT_USAGE
    policies = [p.strip() for p in (ns.policies or base.schedule.policy).split(",") if p.strip()]
    jobs = []
    out_dir = Path(ns.out_dir)
    for policy in policies:
        for seed in seeds:
            cfg = base.with_overrides(seed=seed, policy=policy)
            jobs.append((cfg, str(out_dir / f"{policy}_seed{seed}.jsonl")))
    workers = min(thread_cap(), len(jobs))
    if workers <= 1:
        results = [_sweep_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    diverged = [r for r in results if r["diverged"]]
    for r in results:
        print(json.dumps(r, sort_keys=True))
    if diverged:
        print(f"{len(diverged)} of {len(results)} runs diverged", file=sys.stderr)
        return EXIT_DIVERGENCE
    return EXIT_OK


def cmd_report(ns) -> int:
    paths = collect_traces(ns.inputs)
    csv_text = report(paths)
    if ns.out:
        Path(ns.out).write_text(csv_text, encoding="utf-8")
    else:
        sys.stdout.write(csv_text)
    return EXIT_OK


def cmd_verify(ns) -> int:
    from .verification import resolve, run_suite

    try:
        names = resolve(ns.suite)
    except KeyError as exc:
        print(f"verify: {exc.args[0]}", file=sys.stderr)
        return EXIT_USAGE
    results = []
    for name in names:
        res = run_suite(name)
        results.append(res.to_dict())
        print(f"{'PASS' if res.passed else 'FAIL'} {name} ({res.seconds:.1f}s)", file=sys.stderr)
    passed = all(r["passed"] for r in results)
    doc = {"passed": passed, "suites": results}
    text = json.dumps(doc, sort_keys=True, indent=2, default=float)
    if ns.json:
        Path(ns.json).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return EXIT_OK if passed else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="controlg", description="Closed-loop multi-objective block scheduler simulator.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run one simulation and write its JSONL trace")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides [run] seed")
    p.add_argument("--policy", default=None, help="overrides [schedule] policy")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run a grid of seeds x policies")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", required=True, help="e.g. 0..9 or 1,4,7")
    p.add_argument("--policies", default=None, help="comma-separated; defaults to the config's policy")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarise traces as CSV")
    p.add_argument("--in", dest="inputs", nargs="+", required=True, help="trace files or directories")
    p.add_argument("--out", default=None, help="CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("verify", help="run property suites")
    p.add_argument("--suite", default="all")
    p.add_argument("--json", default=None, help="write the result document here instead of stdout")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return ns.func(ns)
    except (ConfigError, TraceFormatError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

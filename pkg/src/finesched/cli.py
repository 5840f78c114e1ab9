"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 divergence flagged under
``--strict``.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import metrics
from .oracle import load_instance, policy_vs_oracle
from .policy import parse_policy
from .profile import (
    ProfileError,
    default_catalog,
    load_catalog,
    load_memory_spec,
    memory_footprint,
    MemorySpec,
    save_catalog,
)
from .simcore import SimConfig, run
from .tracegen import TraceSpec, dump_trace, generate, read_trace, write_trace

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3

SWEEP_COLUMNS = (
    "policy", "kind", "lambda", "lambda_b", "lambda_v", "cv2", "tau", "seed", "workers",
    "attainment", "mean_accuracy", "divergence",
)


class ConfigError(Exception):
    pass


def parse_duration_us(text: str) -> int:
    m = re.fullmatch(r"\s*([0-9]*\.?[0-9]+)\s*(us|ms|s)?\s*", text)
    if not m:
        raise ConfigError(f"bad time {text!r}; use e.g. 12s, 500ms, 100us")
    scale = {"us": 1, "ms": 1_000, "s": 1_000_000, None: 1_000_000}[m.group(2)]
    return int(round(float(m.group(1)) * scale))


def parse_faults(text: str | None) -> tuple[tuple[int, int], ...]:
    """``"12s:w0,24s:w1"`` -> ((12_000_000, 0), (24_000_000, 1))."""
    if not text:
        return ()
    out = []
    for part in text.split(","):
        when, sep, who = part.strip().partition(":")
        m = re.fullmatch(r"w?(\d+)", who.strip())
        if not sep or not m:
            raise ConfigError(f"bad fault entry {part!r}; use e.g. 12s:w0")
        out.append((parse_duration_us(when), int(m.group(1))))
    return tuple(sorted(out))


def read_kv(path: str | Path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{n}: expected key = value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _catalog(path):
    return load_catalog(path) if path else default_catalog()


def _sim_config(args, catalog) -> SimConfig:
    return SimConfig(
        catalog=catalog,
        policy=parse_policy(args.policy),
        worker_count=args.workers,
        actuation_delay_us=int(round(args.actuation_ms * 1000)),
        bucket_count=args.bucket_count,
        dispatch_overhead_us=args.overhead_us,
        fault_schedule=parse_faults(args.fault),
    )


def _write_outputs(report, args) -> None:
    if args.profile:
        report.config["profile"] = str(args.profile)
    if args.out:
        metrics.write_report(report, args.out)
    else:
        json.dump({"config": report.config, "summary": report.summary()}, sys.stdout, indent=2,
                  sort_keys=True)
        sys.stdout.write("\n")
    if args.outcomes:
        metrics.write_outcomes(report, args.outcomes)
    if args.dynamics:
        metrics.export_dynamics(report, args.dynamics)


def cmd_gen_trace(args) -> int:
    spec = TraceSpec(
        kind=args.kind,
        duration=args.duration,
        slo_us=int(round(args.slo_ms * 1000)),
        seed=args.seed,
        cv2=args.cv2,
        lambda_b=args.lambda_b,
        lambda_v=args.lambda_v,
        lambda_1=args.lambda_1,
        lambda_2=args.lambda_2,
        tau=args.tau,
        spike_period=args.spike_period,
        spike_height=args.spike_height,
    )
    trace = generate(spec)
    if args.out:
        write_trace(trace, args.out)
    else:
        dump_trace(trace, sys.stdout)
    return EXIT_OK


def cmd_simulate(args) -> int:
    trace = read_trace(args.trace)
    cfg = _sim_config(args, _catalog(args.profile))
    report = run(trace, cfg, backend=args.backend)
    _write_outputs(report, args)
    if args.strict and report.divergence:
        print("divergence flagged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_serve(args) -> int:
    from .serve import serve

    trace = read_trace(args.trace)
    cfg = _sim_config(args, _catalog(args.profile))
    report = serve(trace, cfg, pacing_tolerance_us=int(args.pacing_tolerance_ms * 1000))
    _write_outputs(report, args)
    if not report.valid:
        print("client fell behind wall clock; run marked invalid", file=sys.stderr)
    if args.strict and report.divergence:
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_oracle(args) -> int:
    inst = load_instance(args.instance)
    res = policy_vs_oracle(inst, parse_policy(args.policy))
    out = {"policy_objective": res["policy_objective"], "oracle_objective": res["oracle_objective"]}
    if args.verbose:
        out.update(res)
    print(json.dumps(out, indent=2, default=list))
    return EXIT_OK


def cmd_memory(args) -> int:
    if args.spec:
        spec = load_memory_spec(args.spec)
    else:
        spec = MemorySpec(args.shared_bytes, args.stat_bytes, args.subnets)
    print(json.dumps(memory_footprint(spec), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_report(args) -> int:
    if args.outcomes:
        status, acc = metrics.read_outcomes(args.outcomes)
        summary = metrics.aggregate(status, acc)
    else:
        summary = json.loads(Path(args.report).read_text())["summary"]
    for k in sorted(summary):
        print(f"{k}: {summary[k]}")
    return EXIT_OK


def cmd_gen_profile(args) -> int:
    save_catalog(default_catalog(), args.out)
    return EXIT_OK


# -- sweep ---------------------------------------------------------------------

def _as_list(x):
    return x if isinstance(x, list) else [x]


def expand_sweep(spec: dict) -> list[dict]:
    """Cross product of trace parameters x policies x workers x seeds.

    Any key of the trace spec may be a scalar or a list.  ``fixed:*`` expands
    to one Fixed policy per subnet in the catalog.
    """
    if not spec:
        return []
    known = {"trace", "policies", "workers", "seeds", "actuation_ms", "profile", "bucket_count"}
    unknown = set(spec) - known
    if unknown:
        raise ConfigError(f"unknown sweep keys: {sorted(unknown)}")
    catalog = _catalog(spec.get("profile"))
    trace_grid = spec.get("trace", {})
    keys = sorted(trace_grid)
    policies = []
    for p in _as_list(spec.get("policies", ["slackfit"])):
        if p == "fixed:*":
            policies += [f"fixed:{s.id}" for s in catalog.by_accuracy()]
        else:
            policies.append(p)
    cells = []
    combos = itertools.product(
        *(_as_list(trace_grid[k]) for k in keys),
        _as_list(spec.get("seeds", [0])),
        _as_list(spec.get("workers", [8])),
        _as_list(spec.get("actuation_ms", [0])),
        policies,
    )
    for combo in combos:
        *vals, seed, workers, act, pol = combo
        tr = dict(zip(keys, vals))
        tr["seed"] = seed
        cells.append(
            {
                "trace": tr,
                "policy": pol,
                "workers": workers,
                "actuation_ms": act,
                "profile": spec.get("profile"),
                "bucket_count": spec.get("bucket_count", 20),
            }
        )
    # validate every cell before running any of them
    for cell in cells:
        TraceSpec.from_dict(cell["trace"])
        SimConfig(
            catalog,
            parse_policy(cell["policy"]),
            worker_count=int(cell["workers"]),
            actuation_delay_us=int(round(float(cell["actuation_ms"]) * 1000)),
            bucket_count=int(cell["bucket_count"]),
        )
    return cells


def run_cell(cell: dict) -> dict:
    spec = TraceSpec.from_dict(cell["trace"])
    catalog = _catalog(cell["profile"])
    cfg = SimConfig(
        catalog,
        parse_policy(cell["policy"]),
        worker_count=int(cell["workers"]),
        actuation_delay_us=int(round(float(cell["actuation_ms"]) * 1000)),
        bucket_count=int(cell["bucket_count"]),
    )
    rep = run(generate(spec), cfg)
    acc = rep.mean_serving_accuracy
    return {
        "policy": cell["policy"],
        "kind": spec.kind,
        "lambda": round(spec.mean_rate(), 3),
        "lambda_b": spec.lambda_b,
        "lambda_v": spec.lambda_v,
        "cv2": spec.cv2,
        "tau": spec.tau,
        "seed": spec.seed,
        "workers": cfg.worker_count,
        "attainment": f"{rep.slo_attainment:.6f}",
        "mean_accuracy": "" if acc is None else f"{acc:.4f}",
        "divergence": int(rep.divergence),
    }


def sweep(spec: dict, jobs: int | None = None) -> str:
    cells = expand_sweep(spec)
    if jobs == 1 or len(cells) <= 1:
        rows = [run_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run_cell, cells))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def cmd_sweep(args) -> int:
    text = Path(args.spec).read_text().strip()
    spec = json.loads(text) if text else {}
    out = sweep(spec, args.jobs)
    if args.out:
        Path(args.out).write_text(out)
    else:
        sys.stdout.write(out)
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def _add_run_args(p):
    p.add_argument("--trace", required=True)
    p.add_argument("--profile", help="profile CSV (default: built-in synthetic profile)")
    p.add_argument("--policy", default="slackfit")
    p.add_argument("--workers", type=int, default=8)
    p.add_argument("--actuation-ms", type=float, default=0.0)
    p.add_argument("--overhead-us", type=int, default=0)
    p.add_argument("--bucket-count", type=int, default=20)
    p.add_argument("--fault", help='kill schedule, e.g. "12s:w0,24s:w1"')
    p.add_argument("--out", help="report JSON (default: stdout)")
    p.add_argument("--outcomes", help="per-query outcomes JSONL")
    p.add_argument("--dynamics", help="dynamics CSV")
    p.add_argument("--strict", action="store_true", help="exit 3 if divergence is flagged")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="finesched", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="key = value file; command-line flags win")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-trace", help="generate a seeded arrival trace")
    p.add_argument("--kind", choices=("bursty", "time_varying", "spikes"), default="bursty")
    p.add_argument("--duration", type=float, default=60.0, help="seconds")
    p.add_argument("--slo-ms", type=float, default=36.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cv2", type=float, default=1.0)
    p.add_argument("--lambda-b", type=float, default=0.0)
    p.add_argument("--lambda-v", type=float, default=0.0)
    p.add_argument("--lambda-1", type=float, default=0.0)
    p.add_argument("--lambda-2", type=float, default=0.0)
    p.add_argument("--tau", type=float, default=math.inf)
    p.add_argument("--spike-period", type=float, default=15.0)
    p.add_argument("--spike-height", type=float, default=0.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("simulate", help="run the discrete-event simulator")
    _add_run_args(p)
    p.add_argument("--backend", choices=("cython", "python"), default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="replay a trace against live threaded workers")
    _add_run_args(p)
    p.add_argument("--pacing-tolerance-ms", type=float, default=20.0)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("oracle", help="exact optimum vs an online policy on a tiny instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--policy", default="slackfit")
    p.add_argument("--verbose", action="store_true", help="include both schedules")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("sweep", help="run a grid of simulations in parallel")
    p.add_argument("--spec", required=True, help="JSON sweep spec")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("memory", help="supernet memory footprint model")
    p.add_argument("--spec", help="key = value memory spec")
    p.add_argument("--shared-bytes", type=int, default=0)
    p.add_argument("--stat-bytes", type=int, default=0)
    p.add_argument("--subnets", type=int, default=0)
    p.set_defaults(func=cmd_memory)

    p = sub.add_parser("report", help="summarise a report or outcomes file")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--report")
    g.add_argument("--outcomes")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gen-profile", help="write the built-in synthetic profile as CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_profile)
    return ap


def _apply_config(ap, argv):
    """Feed a --config file in as subcommand defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config or not rest:
        return
    kv = read_kv(known.config)
    sub = next(a for a in ap._actions if isinstance(a, argparse._SubParsersAction))
    cmd = next((x for x in rest if x in sub.choices), None)
    if cmd is None:
        return
    parser = sub.choices[cmd]
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, value in kv.items():
        if key not in actions or key == "help":
            raise ConfigError(f"config key {key!r} is not an option of {cmd}")
        act = actions[key]
        if isinstance(act, argparse._StoreTrueAction):
            defaults[key] = value.lower() in ("1", "true", "yes", "on")
        else:
            defaults[key] = value  # string defaults go through the option's type
    parser.set_defaults(**defaults)
    for act in parser._actions:
        if act.dest in defaults and act.required:
            act.required = False


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        _apply_config(ap, argv)
        args = ap.parse_args(argv)
        return args.func(args)
    except (ConfigError, ProfileError, ValueError, KeyError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

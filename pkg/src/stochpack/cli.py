"""Command-line entry point: ``stochpack {classify,pack,simulate,sweep,opt}``.

Every command that writes files also writes a JSON manifest holding the
argument vector, the resolved parameters and a SHA-256 of each output, so
a run can be repeated and compared byte for byte.

Exit codes: 0 ok, 2 usage or validation error, 3 invariant failure,
4 resource guard.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from . import __version__, engine, oracle, policies
from .engine import EmptyPhaseList, InfeasibleInitial, InvariantFailure, Scenario, ScenarioError, TraceSample
from .model import InvalidDistribution, PackingInstance
from .wastelp import ExplosionGuard, build_waste_lp, solve_lp

EXIT_OK, EXIT_USAGE, EXIT_INVARIANT, EXIT_GUARD = 0, 2, 3, 4
TOP_CONFIGS = 12
STEADY_FRACTION = 0.2


class UsageError(ValueError):
    pass


# -- formatting ----------------------------------------------------------------


def fmt(x) -> str:
    """Integers raw, reals with 9 significant digits, missing values empty."""
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float) and math.isnan(x):
        return ""
    return f"{x:.9g}"


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _relative(p: Path, base: Path) -> str:
    try:
        return p.relative_to(base).as_posix()
    except ValueError:
        return p.name


def write_manifest(path: Path, command: str, argv: Sequence[str], params: dict, seed, outputs: Sequence[Path], **extra) -> None:
    doc = {
        "command": command,
        "argv": list(argv),
        "parameters": params,
        "seed": seed,
        "version": __version__,
        "outputs": {_relative(p, path.parent): sha256(p) for p in outputs},
    }
    doc.update(extra)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def level_header(first: str, capacity: int, with_items: bool) -> list[str]:
    head = [first] + (["items"] if with_items else []) + ["bins", "gap_waste", "true_waste"]
    return head + [f"N_{h}" for h in range(1, capacity)]


def level_rows(samples: Sequence[TraceSample], with_items: bool):
    for s in samples:
        yield [s.time] + ([s.item_count] if with_items else []) + [s.bin_count, s.gap_waste, s.true_waste, *s.levels]


def config_rows(samples: Sequence[TraceSample], k: int):
    for s in samples:
        for key, n in s.top_configs(k):
            yield [s.time, key, n]


# -- argument parsing helpers ----------------------------------------------------


def int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def name_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def parse_counts(text: str) -> dict[int, int]:
    """``2:6,3:2`` -> {2: 6, 3: 2}."""
    out: dict[int, int] = {}
    for part in text.split(","):
        if not part.strip():
            continue
        try:
            size, count = (int(v) for v in part.split(":"))
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"expected size:count pairs, got {part!r}") from exc
        if size < 1 or count < 0:
            raise argparse.ArgumentTypeError(f"bad size:count pair {part!r}")
        out[size] = out.get(size, 0) + count
    return out


def instance_from(args) -> PackingInstance:
    if len(args.sizes) != len(args.probs):
        raise UsageError("--sizes and --probs must have the same length")
    return PackingInstance.of(args.capacity, args.sizes, args.probs)


def policy_from(name: str, capacity: int, schedule: str, horizon: int | None, timed: bool):
    if timed and schedule != "anytime" and name in ("pd-quad", "pd-exp"):
        raise UsageError("simulations with departures use the anytime schedule")
    return policies.make_policy(name, capacity, schedule, horizon, departures=timed)


def emit(args, text: str, payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True) if args.json else text)


# -- commands ----------------------------------------------------------------------


def cmd_classify(args, argv) -> int:
    inst = instance_from(args)
    lp = build_waste_lp(inst)
    sol = solve_lp(lp)
    cls = "LW" if sol.waste_rate > 1e-7 else "PP"
    flows = [{"size": s, "level": h, "rate": v} for s, h, v in sol.nonzero_flows(inst.workload.sizes)]
    payload = {"class": cls, "waste_rate": sol.waste_rate, "flows": flows}
    lines = [f"class={cls} W_F={fmt(sol.waste_rate)}"] + [
        f"v(size={f['size']},level={f['level']})={fmt(f['rate'])}" for f in flows
    ]
    emit(args, "\n".join(lines), payload)
    if args.out:
        out = Path(args.out)
        report = out / "classify.json"
        report.parent.mkdir(parents=True, exist_ok=True)
        report.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        write_manifest(out / "manifest.json", "classify", argv, _instance_params(args), None, [report])
    return EXIT_OK


def _instance_params(args) -> dict:
    return {"capacity": args.capacity, "sizes": args.sizes, "probs": args.probs}


def cmd_pack(args, argv) -> int:
    inst = instance_from(args)
    horizon = args.n if args.schedule == "fixed" else None
    pol = policy_from(args.policy, inst.capacity, args.schedule, horizon, timed=False)
    run = engine.StreamRun(inst, pol, args.n, args.seed, args.snapshot_every)
    result = engine.run_stream(run, fast=not args.reference)
    _check_stream(result.samples, inst.capacity)
    last = result.samples[-1]
    params = _instance_params(args) | {
        "policy": args.policy,
        "schedule": args.schedule,
        "n": args.n,
        "snapshot_every": args.snapshot_every,
        "reference": args.reference,
    }
    payload = {"items": last.item_count, "bins": last.bin_count, "gap_waste": last.gap_waste,
               "true_waste": last.true_waste, "hole_volume": last.hole_volume}
    if args.out:
        out = Path(args.out)
        levels = out / "levels.csv"
        write_csv(levels, level_header("item_index", inst.capacity, False), level_rows(result.samples, False))
        write_manifest(out / "manifest.json", "pack", argv, params, args.seed, [levels])
        payload["levels_csv"] = str(levels)
    emit(args, " ".join(f"{k}={fmt(v)}" for k, v in payload.items()), payload)
    return EXIT_OK


def _check_stream(samples: Sequence[TraceSample], capacity: int) -> None:
    for s in samples:
        levels = sum(h * n for h, n in enumerate(s.levels, start=1)) + capacity * s.closed
        volume = capacity * s.bin_count - s.true_waste
        if levels != volume + s.hole_volume or s.true_waste != s.gap_waste + s.hole_volume:
            raise InvariantFailure(f"item {s.time}: level totals disagree with volume and holes")


def _run_scenario(scenario: Scenario, policy_name: str, track: bool, check_every: int) -> list[TraceSample]:
    pol = policy_from(policy_name, scenario.capacity, "anytime", None, timed=True)
    return engine.run_timed(scenario, pol, track_configs=track, check_every=check_every)


def cmd_simulate(args, argv) -> int:
    scenario = engine.load_scenario(args.scenario)
    if args.seed is not None:
        scenario = scenario.with_seed(args.seed)
    if args.rate is not None:
        scenario = scenario.with_rate(args.rate)
    track = not args.no_configs
    samples = _run_scenario(scenario, args.policy, track, args.check_every)
    prefix = Path(args.out) if args.out else Path(Path(args.scenario).stem)
    levels = prefix.with_name(prefix.name + "_levels.csv")
    write_csv(levels, level_header("time", scenario.capacity, True), level_rows(samples, True))
    outputs = [levels]
    if track:
        configs = prefix.with_name(prefix.name + "_configs.csv")
        write_csv(configs, ["time", "config_key", "count"], config_rows(samples, args.top))
        outputs.append(configs)
    params = {
        "scenario": engine.scenario_to_dict(scenario),
        "policy": args.policy,
        "track_configs": track,
        "top": args.top,
        "check_every": args.check_every,
    }
    write_manifest(prefix.with_name(prefix.name + "_manifest.json"), "simulate", argv, params, scenario.seed, outputs)
    last = samples[-1]
    payload = {"samples": len(samples), "time": last.time, "items": last.item_count, "bins": last.bin_count,
               "true_waste": last.true_waste, "outputs": [str(p) for p in outputs]}
    emit(args, f"samples={len(samples)} final_time={fmt(last.time)} items={last.item_count} "
               f"bins={last.bin_count} true_waste={last.true_waste}", payload)
    return EXIT_OK


def _sweep_one(task: dict) -> dict:
    """Run one (policy, rate, seed) cell; returns a summary row or the failure."""
    scenario = engine.scenario_from_dict(task["scenario"])
    key = {"policy": task["policy"], "lambda": task["lambda"], "seed": scenario.seed}
    try:
        samples = _run_scenario(scenario, task["policy"], task["track"], task["check_every"])
    except (InvariantFailure, AssertionError, ValueError, ExplosionGuard) as exc:
        return key | {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
    out = Path(task["out"])
    stem = f"{task['policy']}_lam{fmt(task['lambda'])}_seed{scenario.seed}"
    levels = out / "runs" / f"{stem}_levels.csv"
    write_csv(levels, level_header("time", scenario.capacity, True), level_rows(samples, True))
    files = [str(levels.relative_to(out))]
    if task["track"]:
        configs = out / "runs" / f"{stem}_configs.csv"
        write_csv(configs, ["time", "config_key", "count"], config_rows(samples, task["top"]))
        files.append(str(configs.relative_to(out)))
    horizon = scenario.horizon
    steady = engine.mean_waste(samples, (1.0 - STEADY_FRACTION) * horizon, horizon)
    t_hit = engine.first_time_below(samples, task["threshold"] * task["lambda"], task["after"])
    return key | {
        "status": "ok",
        "steady_waste": steady,
        "final_waste": samples[-1].true_waste,
        "time_to_threshold": t_hit,
        "files": files,
    }


SUMMARY_HEADER = ["policy", "lambda", "seed", "status", "steady_waste", "final_waste", "time_to_threshold"]
STATS_HEADER = ["policy", "lambda", "runs", "reached", "steady_waste_mean", "time_mean", "time_min", "time_max"]


def cmd_sweep(args, argv) -> int:
    if not args.policies or not args.lambdas or not args.seeds:
        raise UsageError("--policies, --lambdas and --seeds must all be nonempty")
    for name in args.policies:
        policy_from(name, 2, "anytime", None, timed=True)
    base = engine.load_scenario(args.scenario)
    out = Path(args.out) if args.out else Path("sweep")
    tasks = []
    for name in args.policies:
        for lam in args.lambdas:
            if not lam > 0:
                raise UsageError(f"arrival rate must be positive, got {lam}")
            for seed in args.seeds:
                sc = base.with_rate(lam).with_seed(seed)
                tasks.append({
                    "scenario": engine.scenario_to_dict(sc), "policy": name, "lambda": lam,
                    "track": not args.no_configs, "top": args.top, "check_every": args.check_every,
                    "threshold": args.threshold, "after": args.after, "out": str(out),
                })
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(t) for t in tasks]
    results.sort(key=lambda r: (r["policy"], r["lambda"], r["seed"]))

    summary = out / "summary.csv"
    write_csv(summary, SUMMARY_HEADER, ([r.get(k) for k in SUMMARY_HEADER] for r in results))
    stats = out / "summary_stats.csv"
    write_csv(stats, STATS_HEADER, _sweep_stats(results))
    failed = [{"policy": r["policy"], "lambda": r["lambda"], "seed": r["seed"], "error": r["error"]}
              for r in results if r["status"] != "ok"]
    outputs = [summary, stats] + [out / f for r in results if r["status"] == "ok" for f in r["files"]]
    params = {
        "scenario": engine.scenario_to_dict(base),
        "policies": args.policies,
        "lambdas": args.lambdas,
        "seeds": args.seeds,
        "threshold": args.threshold,
        "after": args.after,
        "track_configs": not args.no_configs,
        "top": args.top,
        "check_every": args.check_every,
        "steady_fraction": STEADY_FRACTION,
    }
    # job count is left out on purpose: it must not change any output
    write_manifest(out / "manifest.json", "sweep", argv, params, args.seeds, outputs, failed=failed)
    payload = {"runs": len(results), "failed": len(failed), "summary": str(summary)}
    emit(args, f"runs={len(results)} failed={len(failed)} summary={summary}", payload)
    return EXIT_INVARIANT if failed else EXIT_OK


def _sweep_stats(results: list[dict]):
    groups: dict[tuple, list[dict]] = {}
    for r in results:
        groups.setdefault((r["policy"], r["lambda"]), []).append(r)
    for (name, lam), rows in sorted(groups.items()):
        ok = [r for r in rows if r["status"] == "ok"]
        hits = [r["time_to_threshold"] for r in ok if r["time_to_threshold"] is not None]
        steady = [r["steady_waste"] for r in ok]
        yield [
            name,
            lam,
            len(rows),
            len(hits),
            math.fsum(steady) / len(steady) if steady else None,
            math.fsum(hits) / len(hits) if hits else None,
            min(hits) if hits else None,
            max(hits) if hits else None,
        ]


def cmd_opt(args, argv) -> int:
    if not args.counts:
        raise UsageError("--counts needs at least one size:count pair")
    sizes = sorted(args.counts)
    if sizes[-1] > args.capacity:
        raise UsageError(f"item size {sizes[-1]} exceeds capacity {args.capacity}")
    res = oracle.exact_offline_opt([args.counts[s] for s in sizes], sizes, args.capacity)
    payload = {"bins": res.min_bins, "waste": res.waste}
    emit(args, f"bins={res.min_bins} waste={res.waste}", payload)
    if args.out:
        out = Path(args.out)
        report = out / "opt.json"
        report.parent.mkdir(parents=True, exist_ok=True)
        report.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        params = {"capacity": args.capacity, "counts": {str(s): args.counts[s] for s in sizes}}
        write_manifest(out / "manifest.json", "opt", argv, params, None, [report])
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="print JSON instead of text")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory or file prefix")

    parser = argparse.ArgumentParser(prog="stochpack", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def instance_args(p):
        p.add_argument("--capacity", type=int, required=True)
        p.add_argument("--sizes", type=int_list, required=True)
        p.add_argument("--probs", type=float_list, required=True)

    p = sub.add_parser("classify", parents=[common], help="solve the waste LP and report LW or PP")
    instance_args(p)

    p = sub.add_parser("pack", parents=[common], help="pack an arrival-only stream")
    instance_args(p)
    p.add_argument("--policy", choices=["pd-quad", "pd-exp", "ss", "bf"], required=True)
    p.add_argument("--schedule", choices=["fixed", "anytime"], default="anytime")
    p.add_argument("--n", type=int, required=True, help="number of items")
    p.add_argument("--snapshot-every", type=int, default=1000)
    p.add_argument("--reference", action="store_true", help="use the object-level loop instead of the compiled one")

    def timed_args(p):
        p.add_argument("--no-configs", action="store_true", help="skip configuration counts (faster)")
        p.add_argument("--top", type=int, default=TOP_CONFIGS, help="configurations per sample")
        p.add_argument("--check-every", type=int, default=0, help="full invariant check every N events")

    p = sub.add_parser("simulate", parents=[common], help="event-driven run of a scenario file")
    p.add_argument("scenario")
    p.add_argument("--policy", choices=["pd-quad", "pd-exp", "ss", "bf"], required=True)
    p.add_argument("--rate", type=float, help="override the arrival rate (initial state scaled alike)")
    timed_args(p)

    p = sub.add_parser("sweep", parents=[common], help="policies x rates x seeds over one scenario")
    p.add_argument("scenario")
    p.add_argument("--policies", type=name_list, required=True)
    p.add_argument("--lambdas", type=float_list, required=True)
    p.add_argument("--seeds", type=int_list, default=[0])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--threshold", type=float, default=0.05, help="time-to-threshold level as a fraction of lambda")
    p.add_argument("--after", type=float, default=0.0, help="ignore threshold crossings before this time")
    timed_args(p)

    p = sub.add_parser("opt", parents=[common], help="exact offline optimum for a small item multiset")
    p.add_argument("--capacity", type=int, required=True)
    p.add_argument("--counts", type=parse_counts, required=True, help="size:count pairs, e.g. 2:6,3:2")
    return parser


COMMANDS = {"classify": cmd_classify, "pack": cmd_pack, "simulate": cmd_simulate, "sweep": cmd_sweep, "opt": cmd_opt}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for name, default in (("seed", None), ("json", False), ("out", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    if args.command == "pack" and args.seed is None:
        args.seed = 0
    try:
        return COMMANDS[args.command](args, argv)
    except ExplosionGuard as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (InvariantFailure, AssertionError) as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, InvalidDistribution, EmptyPhaseList, InfeasibleInitial, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

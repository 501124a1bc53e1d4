"""Command line entry point: check, reshape, run, batch, scan and plot."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .scenario import DATA_DIR, ScenarioError, parse_scenario

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_BREACH = 2
EXIT_NOT_CONVERGED = 3

log = logging.getLogger("reachnav")


def _read_raw(name: str) -> tuple[dict, str]:
    p = Path(name)
    if not p.exists():
        p = DATA_DIR / (name if name.endswith(".json") else f"{name}.json")
    if not p.exists():
        raise ScenarioError(f"scenario file not found: {name}")
    try:
        return json.loads(p.read_text(encoding="utf-8")), p.stem
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"{p}: invalid JSON ({exc})") from None


def load_with_overrides(args):
    raw, stem = _read_raw(args.scenario)
    for key in ("seed", "dt", "budget", "resolution"):
        v = getattr(args, key, None)
        if v is not None:
            raw[key] = v
    if getattr(args, "waive_checks", False):
        raw["waive_checks"] = True
    return parse_scenario(raw, stem)


def _out_dir(args, spec) -> Path:
    base = args.out_dir or os.environ.get("REACHNAV_OUT_DIR") or "reachnav_out"
    d = Path(base) / spec.name
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_bundle(d: Path, spec, tlog, result) -> None:
    from .plotting import clearance_svg, trajectory_svg

    tlog.to_csv(d / "trajectory.csv")
    tlog.jumps_to_csv(d / "jumps.csv")
    (d / "result.json").write_text(json.dumps(result.to_json(), indent=1, sort_keys=True) + "\n",
                                   encoding="utf-8")
    (d / "trajectory.svg").write_text(trajectory_svg(spec.model, [tlog], spec.name), encoding="utf-8")
    (d / "clearance.svg").write_text(clearance_svg(tlog, spec.r_a), encoding="utf-8")


def _status(result) -> int:
    if result.breach:
        return EXIT_BREACH
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_check(args) -> int:
    from .simulation import assumption_report

    spec = load_with_overrides(args)
    print(f"scenario {spec.name}: mode={spec.mode} robot={spec.robot['model']}")
    for k, v in spec.derived.items():
        print(f"  {k} = {v}")
    rep = assumption_report(spec)
    ok = True
    for name, passed in rep.items():
        label = name if passed else name.replace("connected", "disconnected")
        if name == "reach certificate" and not passed:
            label = "reach certificate failed"
        print(f"  [{'ok' if passed else 'FAIL'}] {label}")
        ok &= passed
    return EXIT_OK if ok else EXIT_INVALID


def cmd_reshape(args) -> int:
    from .morphology import closing, rasterize, save_pgm

    spec = load_with_overrides(args)
    a, res = spec.controller.alpha, spec.resolution
    mask = rasterize(spec.model, res, margin=2 * a + spec.r_a + 4 * res)
    d = _out_dir(args, spec)
    save_pgm(closing(mask, a), d / "reshaped.pgm")
    print(d / "reshaped.pgm")
    return EXIT_OK


def cmd_run(args) -> int:
    from .simulation import AssumptionFailure, run_scenario

    spec = load_with_overrides(args)
    try:
        tlog, result = run_scenario(spec)
    except AssumptionFailure as exc:
        print(f"assumption check failed: {exc} (use --waive-checks to run anyway)", file=sys.stderr)
        return EXIT_INVALID
    d = _out_dir(args, spec)
    _write_bundle(d, spec, tlog, result)
    if tlog.breach is not None:
        b = tlog.breach
        print(f"SAFETY BREACH at t={b['t']:.6g} x={b['x']} clearance={b['clearance']:.6g}",
              file=sys.stderr)
    print(json.dumps(result.to_json(), sort_keys=True))
    return _status(result)


def _batch_one(job):
    from .simulation import run_scenario

    spec, k, start, out = job
    tlog, result = run_scenario(spec, start=start)
    d = Path(out) / f"run_{k:02d}"
    d.mkdir(parents=True, exist_ok=True)
    _write_bundle(d, spec, tlog, result)
    return k, tlog, result


def cmd_batch(args) -> int:
    from .plotting import trajectory_svg
    from .simulation import AssumptionFailure, preflight

    spec = load_with_overrides(args)
    starts = spec.starts or [tuple(spec.start)]
    if not spec.waive_checks:
        failed = preflight(spec)
        if failed:
            print(f"assumption check failed: {'; '.join(failed)}", file=sys.stderr)
            return EXIT_INVALID
    spec.waive_checks = True   # checked once above
    d = _out_dir(args, spec)
    jobs = [(spec, k, s, str(d)) for k, s in enumerate(starts)]
    try:
        if args.workers and args.workers > 1:
            with ProcessPoolExecutor(max_workers=args.workers) as ex:
                outs = list(ex.map(_batch_one, jobs))
        else:
            outs = [_batch_one(j) for j in jobs]
    except AssumptionFailure as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    outs.sort(key=lambda o: o[0])
    logs = [o[1] for o in outs]
    results = [o[2] for o in outs]
    (d / "batch.svg").write_text(trajectory_svg(spec.model, logs, spec.name), encoding="utf-8")
    summary = {"scenario": spec.name, "runs": [dict(r.to_json(), start=list(map(float, s)))
                                              for r, s in zip(results, starts)],
               "converged": sum(r.converged for r in results), "total": len(results)}
    (d / "batch.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n",
                                  encoding="utf-8")
    print(f"{summary['converged']}/{summary['total']} converged; report in {d}")
    if any(r.breach for r in results):
        return EXIT_BREACH
    return EXIT_OK if all(r.converged for r in results) else EXIT_NOT_CONVERGED


def cmd_scan(args) -> int:
    from .sensor import SensorConfig, save_scan_csv, scan

    spec = load_with_overrides(args)
    cfg = spec.sensor or SensorConfig(3.0)
    x = np.array([args.x, args.y]) if args.x is not None else spec.start
    s = scan(x, spec.model, cfg, np.random.default_rng(spec.seed))
    d = _out_dir(args, spec)
    save_scan_csv(s, d / "scan.csv")
    print(d / "scan.csv")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import clearance_svg, trajectory_svg
    from .simulation import TrajectoryLog

    spec = load_with_overrides(args)
    src = Path(args.trajectory)
    jumps = Path(args.jumps) if args.jumps else src.with_name("jumps.csv")
    tlog = TrajectoryLog.from_csv(src, jumps if jumps.exists() else None)
    out = Path(args.out) if args.out else src.with_name("trajectory.svg")
    out.write_text(trajectory_svg(spec.model, [tlog], spec.name), encoding="utf-8")
    print(out)
    if args.clearance_out:
        Path(args.clearance_out).write_text(clearance_svg(tlog, spec.r_a), encoding="utf-8")
        print(args.clearance_out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reachnav", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, sim=False):
        sp.add_argument("--scenario", required=True, help="path or bundled scenario name")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--resolution", type=float)
        sp.add_argument("--out-dir", help="default: $REACHNAV_OUT_DIR or ./reachnav_out")
        if sim:
            sp.add_argument("--dt", type=float)
            sp.add_argument("--budget", type=int)
            sp.add_argument("--waive-checks", action="store_true")

    common(sub.add_parser("check", help="assumption report"))
    common(sub.add_parser("reshape", help="write the reshaped obstacle mask as PGM"))
    common(sub.add_parser("run", help="simulate one start and write the report bundle"), sim=True)
    b = sub.add_parser("batch", help="simulate every listed start")
    common(b, sim=True)
    b.add_argument("--workers", type=int, default=1)
    s = sub.add_parser("scan", help="one-shot sensor dump")
    common(s)
    s.add_argument("--x", type=float)
    s.add_argument("--y", type=float)
    pl = sub.add_parser("plot", help="re-render SVGs from a trajectory CSV")
    common(pl)
    pl.add_argument("--trajectory", required=True)
    pl.add_argument("--jumps")
    pl.add_argument("--out")
    pl.add_argument("--clearance-out")
    return p


COMMANDS = {"check": cmd_check, "reshape": cmd_reshape, "run": cmd_run, "batch": cmd_batch,
            "scan": cmd_scan, "plot": cmd_plot}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    if args.command == "scan" and (args.x is None) != (args.y is None):
        print("--x and --y go together", file=sys.stderr)
        return EXIT_INVALID
    try:
        return COMMANDS[args.command](args)
    except ScenarioError as exc:
        print("invalid scenario:", file=sys.stderr)
        for e in exc.errors:
            print(f"  - {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

"""
Command-line entry point: ``uwbslam {simulate,replay,ablate,sweep,evaluate}``.

Every command writes plain files (gzipped JSON-lines logs, JSON reports, CSV)
into ``--out``; exit status is 0 on success, 1 on reported errors and 2 on
usage errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from .driver import DriverConfig, MalformedLog, RunLog, replay
from .ekf import SlamState
from .evaluation import ABLATION_MODES, evaluate, evaluate_run, residuals_csv, run_ablation
from .runner import run_scenario
from .scenario import ScenarioError, load_scenario
from .sim import NoiseConfig, deploy_tag


class CliError(Exception):
    pass


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_report(out: Path, stem: str, report, pair, T):
    (out / f"{stem}.json").write_text(report.to_json() + "\n")
    (out / f"{stem}_residuals.csv").write_text(residuals_csv(pair, T))


def _world_with_log_tags(world, log: RunLog):
    for rec in log.of_type("deploy"):
        if "position" in rec and rec["tag_id"] not in world.tags:
            world = deploy_tag(world, rec["position"], rec["tag_id"])
    return world


def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario)
    out = _out_dir(args.out)
    result = run_scenario(sc, args.seed, args.mode, record=True, audit=True)
    final = result.driver.final_snapshot()
    result.log.append(final)
    result.log.write(out / "runlog.jsonl.gz")
    report, pair, T = evaluate_run(result)
    _write_report(out, "report", report, pair, T)
    print(f"{sc.name} seed={result.seed} mode={args.mode}: rms_ate={report.rms_ate:.4f} m, "
          f"{report.n_landmarks} landmarks, {report.n_deployments} deployments, {result.runtime:.1f} s")
    if result.driver.violations:
        for v in result.driver.violations[:10]:
            print(f"invariant violation at step {v[0]} ({v[1]}): {v[2]}", file=sys.stderr)
        return 1
    return 0


def _load_log(path) -> RunLog:
    try:
        return RunLog.read(path)
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror or exc}") from exc


def cmd_replay(args) -> int:
    sc = load_scenario(args.scenario)
    log = _load_log(args.log)
    res = replay(log, sc.driver, args.mode)
    out = _out_dir(args.out)
    final = res.driver.final_snapshot()
    (out / "replay_final.json").write_text(json.dumps(final) + "\n")
    recorded = [r for r in log.of_type("snapshot") if r.get("final")]
    if recorded:
        same = recorded[-1]["mu"] == final["mu"] and recorded[-1].get("sigma_flat") == final["sigma_flat"]
        print("final state " + ("matches" if same else "DIFFERS from") + " the recorded run")
    if len(res.driver.trajectory) >= 2 and res.truth:
        world = _world_with_log_tags(sc.world, log)
        report, pair, T = evaluate(res.driver.trajectory, res.truth, res.driver.state, world, mode=args.mode,
                                   config_hash=sc.driver.config_hash(), scenario=sc.name,
                                   n_deployments=len(res.driver.deployments))
        _write_report(out, "report", report, pair, T)
        print(f"replayed {len(res.snapshots)} SLAM steps: rms_ate={report.rms_ate:.4f} m")
    else:
        print(f"replayed {len(res.snapshots)} SLAM steps")
    return 0


def cmd_evaluate(args) -> int:
    sc = load_scenario(args.scenario)
    log = _load_log(args.log)
    truth = {r["t"]: np.asarray(r["gt"]) for r in log.of_type("odom") if "gt" in r}
    snaps = [r for r in log.of_type("snapshot") if not r.get("final")]
    if len(snaps) < 2:
        raise CliError("log holds fewer than two SLAM snapshots")
    traj = [(r["pose_t"], r["mu"][:3]) for r in snaps]
    finals = [r for r in log.of_type("snapshot") if r.get("final")]
    state = SlamState.from_snapshot(finals[-1] if finals else snaps[-1])
    world = _world_with_log_tags(sc.world, log)
    report, pair, T = evaluate(traj, truth, state, world, mode="recorded", config_hash=sc.driver.config_hash(),
                               scenario=sc.name, n_deployments=len(log.of_type("deploy")))
    out = _out_dir(args.out)
    _write_report(out, "report", report, pair, T)
    print(f"rms_ate={report.rms_ate:.4f} m over {report.n_poses} poses")
    return 0


def cmd_ablate(args) -> int:
    modes = args.modes
    sc = load_scenario(args.scenario)
    out = _out_dir(args.out)
    full = run_scenario(sc, args.seed, "full")
    rows = []
    for m in modes:
        if m == "full":
            report, pair, T = evaluate_run(full)
        else:
            report, res = run_ablation(sc, m, args.seed, schedule=full.schedule)
            report, pair, T = evaluate_run(res)
        _write_report(out, f"report_{m}", report, pair, T)
        rows.append((m, report.rms_ate, report.final_pose_error))
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "rms_ate", "final_pose_error"])
        for m, ate, fpe in rows:
            w.writerow([m, repr(ate), repr(fpe)])
    for m, ate, _ in rows:
        print(f"{m:>11s}  {ate:.4f}")
    return 0


def _resolve_param(path: str):
    section, _, name = path.rpartition(".")
    section = section or "driver"
    cls = {"driver": DriverConfig, "noise": NoiseConfig}.get(section)
    if cls is None or name not in {f.name for f in fields(cls)}:
        raise CliError(f"parameter {path!r} does not resolve to a driver or noise setting")
    return section, name


def cmd_sweep(args) -> int:
    section, name = _resolve_param(args.param)
    values = [yaml.safe_load(v) for v in args.values.split(",") if v.strip()] if args.values else []
    if not values:
        raise CliError("--values needs at least one value")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [args.seed]
    sc = load_scenario(args.scenario)
    out = _out_dir(args.out)
    rows = []
    for v in values:
        val = tuple(v) if isinstance(v, list) else v
        try:
            variant = sc.with_driver(**{name: val}) if section == "driver" else sc.with_noise(**{name: val})
        except (TypeError, ValueError) as exc:
            raise CliError(f"{args.param}={v!r}: {exc}") from exc
        for seed in seeds:
            res = run_scenario(variant, seed, args.mode)
            report, _, _ = evaluate_run(res)
            rows.append((v, seed, report.rms_ate, report.n_deployments))
            print(f"{args.param}={v} seed={seed}: rms_ate={report.rms_ate:.4f} deployments={report.n_deployments}")
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "value", "seed", "rms_ate", "n_deployments"])
        for v, seed, ate, nd in rows:
            w.writerow([args.param, json.dumps(v), seed, repr(ate), nd])
    return 0


def _modes(text: str) -> list:
    modes = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in modes if m not in ABLATION_MODES]
    if bad or not modes:
        raise argparse.ArgumentTypeError(f"unknown mode(s) {', '.join(bad) or '(none)'}; choose from {', '.join(ABLATION_MODES)}")
    return modes


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uwbslam", description="UWB radar + AOA SLAM simulation and evaluation")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, log=False):
        sp.add_argument("--scenario", required=True, help="scenario YAML file or bundled scenario name")
        sp.add_argument("--out", default="out", help="output directory")
        if log:
            sp.add_argument("--log", required=True, help="recorded run log (.jsonl or .jsonl.gz)")
        else:
            sp.add_argument("--seed", type=int, default=None)

    s = sub.add_parser("simulate", help="run the full pipeline and record a log")
    common(s)
    s.add_argument("--mode", choices=ABLATION_MODES, default="full")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("replay", help="feed a recorded log through the driver")
    common(s, log=True)
    s.add_argument("--mode", choices=ABLATION_MODES, default="full")
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("ablate", help="compare sensor subsets on one physical run")
    common(s)
    s.add_argument("--modes", type=_modes, default=list(ABLATION_MODES))
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("sweep", help="vary one parameter over values and seeds")
    common(s)
    s.add_argument("--param", required=True, help="driver parameter name (or noise.<name>)")
    s.add_argument("--values", required=True, help="comma separated values")
    s.add_argument("--seeds", default=None, help="comma separated seeds")
    s.add_argument("--mode", choices=ABLATION_MODES, default="full")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("evaluate", help="metrics of a recorded log")
    common(s, log=True)
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, MalformedLog, CliError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

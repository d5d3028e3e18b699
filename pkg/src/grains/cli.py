"""Command-line experiment runner: ``grains {simulate,calibrate,detect,explore,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path as FsPath

import numpy as np

from .anomaly import fixed_threshold_stop, run_detector, stop_outcome
from .boa import write_field_csv, write_grid_csv
from .bpes import estimate_outline, footprint_mask, iou, run_bpes
from .calibration import CalibrationReport, calibrate, replay_rows, simulate_calibration_traces
from .config import ConfigError, ExperimentConfig, load_config
from .granular_sim import simulate_rake, write_trace_csv
from .trajectory import gen_linear, gen_spiral

log = logging.getLogger("grains")

CALIBRATION_FILE = "calibration.json"


def _g9(x):
    return None if x is None or not np.isfinite(x) else float(f"{x:.9g}")


def _median(xs):
    xs = [x for x in xs if x is not None]
    return _g9(float(np.median(xs))) if xs else None


def _write_json(path: FsPath, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _path(cfg: ExperimentConfig, params):
    if cfg.start is None or cfg.goal is None:
        raise ConfigError("path.start and path.goal are required for this command")
    if cfg.path_kind == "linear":
        return gen_linear(cfg.start, cfg.goal)
    return gen_spiral(cfg.start, cfg.goal, params)


def _load_report(cfg: ExperimentConfig, out: FsPath) -> CalibrationReport | None:
    src = FsPath(cfg.calibration_report) if cfg.calibration_report else out / CALIBRATION_FILE
    if not src.exists():
        if cfg.calibration_report:
            raise ConfigError(f"calibration.report: {src} does not exist")
        return None
    return CalibrationReport.from_dict(json.loads(src.read_text()))


def cmd_simulate(cfg: ExperimentConfig, out: FsPath, args) -> int:
    params = cfg.trajectory
    path = _path(cfg, params)
    for seed in cfg.seeds:
        tr = simulate_rake(cfg.scene, cfg.medium, path, params.mv, cfg.motion, seed)
        dest = out / f"trace_seed{seed}.csv"
        with open(dest, "w", newline="") as fp:
            write_trace_csv(tr, fp)
        print(f"seed {seed}: {len(tr.drag)} samples -> {dest}")
    return 0


def _replay(cfg: ExperimentConfig, path) -> CalibrationReport:
    doc = json.loads(FsPath(path).read_text())
    name = cfg.medium.name
    row = doc.get(name, doc) if isinstance(doc, dict) else None
    if not (isinstance(row, dict) and "rmse" in row and "max_abs_z" in row):
        raise ConfigError(f"{path}: no rmse/max_abs_z rows for medium {name!r}")
    calib = cfg.calibration
    if "mv_grid" in row:
        calib = replace(calib, mv_grid=tuple(row["mv_grid"]))
    return replay_rows(row["rmse"], row["max_abs_z"], calib, cfg.motion, name)


def cmd_calibrate(cfg: ExperimentConfig, out: FsPath, args) -> int:
    if args.replay_table:
        report = _replay(cfg, args.replay_table)
    else:
        traces = simulate_calibration_traces(cfg.medium, cfg.calibration, cfg.motion, cfg.seeds[0])
        report = calibrate(traces, cfg.calibration, cfg.motion, cfg.medium.name)
    _write_json(out / CALIBRATION_FILE, report.to_dict())
    (out / "calibration_table.txt").write_text(report.table() + "\n")
    print(f"medium: {cfg.medium.name}")
    print(report.table())
    return 0


def cmd_detect(cfg: ExperimentConfig, out: FsPath, args) -> int:
    det, params = cfg.detector_config(_load_report(cfg, out))
    path = _path(cfg, params)
    runs = []
    for seed in cfg.seeds:
        tr = simulate_rake(cfg.scene, cfg.medium, path, params.mv, cfg.motion, seed)
        res = run_detector(tr, det)
        with open(out / f"verdicts_seed{seed}.jsonl", "w") as fp:
            res.write_jsonl(fp)
        o = stop_outcome(tr, res)
        run = {
            "seed": seed,
            "stopped": o.stopped,
            "stop_distance_cm": _g9(o.clearance_cm) if o.stopped else None,
            "contact": o.contact,
            "warning_iteration": o.stop_index if o.stopped else None,
        }
        if args.baseline_threshold is not None:
            b = fixed_threshold_stop(tr, args.baseline_threshold)
            run["baseline_stopped"] = b.stopped
            run["baseline_contact"] = b.contact
            run["baseline_stop_distance_cm"] = _g9(b.clearance_cm) if b.stopped else None
        runs.append(run)
    summary = {
        "medium": cfg.medium.name,
        "mv": params.mv,
        "periodicity_prior": det.periodicity_prior,
        "zs_threshold": _g9(det.zs_threshold),
        "runs": runs,
        "median_stop_distance_cm": _median([r["stop_distance_cm"] for r in runs]),
        "contact_rate": _g9(np.mean([r["contact"] for r in runs])),
    }
    if args.baseline_threshold is not None:
        summary["baseline_threshold_N"] = args.baseline_threshold
        summary["baseline_contact_rate"] = _g9(np.mean([r["baseline_contact"] for r in runs]))
    _write_json(out / "detect_summary.json", summary)
    _print_detect(summary)
    return 0


def cmd_explore(cfg: ExperimentConfig, out: FsPath, args) -> int:
    det, params = cfg.detector_config(_load_report(cfg, out))
    ex = cfg.exploration
    runs = []
    for seed in cfg.seeds:
        res = run_bpes(cfg.scene, cfg.medium, det, params, ex, cfg.x_init, seed, cfg.motion)
        with open(out / f"explore_seed{seed}.jsonl", "w") as fp:
            res.log.write_jsonl(fp)
        write_field_csv(res.field, out / f"field_mean_seed{seed}.csv", out / f"field_var_seed{seed}.csv")
        mask = estimate_outline(res.field, ex.outline_threshold)
        with open(out / f"mask_seed{seed}.csv", "w", newline="") as fp:
            write_grid_csv(mask.astype(int), res.field.grid, fp, "{:d}")
        truth = footprint_mask(cfg.scene, res.field.grid, cfg.medium.rupture_distance / 100.0)
        runs.append({
            "seed": seed,
            "slides": res.slides,
            "contacts": res.contacts,
            "presence_reports": res.log.count("PresenceReported"),
            "iou": _g9(iou(mask, truth)),
            "finish": res.finish_reason,
        })
    summary = {
        "medium": cfg.medium.name,
        "runs": runs,
        "median_iou": _median([r["iou"] for r in runs]),
        "median_slides": _median([r["slides"] for r in runs]),
        "total_contacts": int(sum(r["contacts"] for r in runs)),
    }
    _write_json(out / "explore_summary.json", summary)
    _print_explore(summary)
    return 0


def _fmt(x, spec=".2f"):
    return "-" if x is None else format(x, spec)


def _print_detect(s: dict) -> None:
    print(f"medium {s['medium']}  MV {s['mv']:g}  T {s['periodicity_prior']}  ZS {s['zs_threshold']:.4g}")
    base = "baseline_contact" in (s["runs"][0] if s["runs"] else {})
    print("seed  stop_cm  contact  warning_it" + ("  baseline_contact" if base else ""))
    for r in s["runs"]:
        line = (f"{r['seed']:>4}  {_fmt(r['stop_distance_cm']):>7}  {str(r['contact']):>7}  "
                f"{_fmt(r['warning_iteration'], 'd'):>10}")
        if base:
            line += f"  {str(r['baseline_contact']):>16}"
        print(line)
    print(f"median stop distance {_fmt(s['median_stop_distance_cm'])} cm, contact rate {s['contact_rate']:g}")
    if "baseline_contact_rate" in s:
        print(f"baseline {s['baseline_threshold_N']:g} N contact rate {s['baseline_contact_rate']:g}")


def _print_explore(s: dict) -> None:
    print(f"medium {s['medium']}")
    print("seed  slides  contacts  presence    IoU  finish")
    for r in s["runs"]:
        print(f"{r['seed']:>4}  {r['slides']:>6}  {r['contacts']:>8}  {r['presence_reports']:>8}  "
              f"{r['iou']:.3f}  {r['finish']}")
    print(f"median IoU {_fmt(s['median_iou'], '.3f')}, median slides {_fmt(s['median_slides'], 'g')}, "
          f"contacts {s['total_contacts']}")


def cmd_report(cfg: ExperimentConfig, out: FsPath, args) -> int:
    found = False
    cal = out / CALIBRATION_FILE
    if cal.exists():
        found = True
        print(CalibrationReport.from_dict(json.loads(cal.read_text())).table())
    for name, printer in (("detect_summary.json", _print_detect), ("explore_summary.json", _print_explore)):
        p = out / name
        if p.exists():
            found = True
            printer(json.loads(p.read_text()))
    if not found:
        print(f"no results in {out}", file=sys.stderr)
        return 1
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "detect": cmd_detect,
    "explore": cmd_explore,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grains", description=__doc__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--seed", type=int, action="append", help="run only this seed (repeatable)")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--replay-table", help="JSON with precomputed calibration rows")
    p.add_argument("--baseline-threshold", type=float, help="also run a fixed-force baseline (N)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed:
            cfg.seeds = list(args.seed)
        out = FsPath(args.out or cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args)
    except (ConfigError, OSError) as e:
        print(f"grains: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

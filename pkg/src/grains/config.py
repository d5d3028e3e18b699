"""JSON experiment configuration.

A config is one JSON document. Every section is optional except ``medium``;
see ``docs/config.md`` for the schema. Lengths are in meters and forces in
newtons.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path as FsPath

from .anomaly import DetectorConfig
from .bpes import ExplorationConfig
from .calibration import CalibrationConfig, CalibrationReport
from .granular_sim import ConvexPolygon, Disk, MediumSpec, Rect, Scene, get_medium
from .trajectory import MotionConstants, Pose2, TrajectoryParams, as_pose


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    medium: MediumSpec
    scene: Scene
    trajectory: TrajectoryParams = TrajectoryParams()
    motion: MotionConstants = MotionConstants()
    start: Pose2 | None = None
    goal: Pose2 | None = None
    path_kind: str = "spiral"
    detector: dict = field(default_factory=dict)
    calibration: CalibrationConfig = CalibrationConfig()
    calibration_report: str | None = None
    exploration: ExplorationConfig = ExplorationConfig()
    x_init: Pose2 | None = None
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "out"

    def detector_config(self, report: CalibrationReport | None = None) -> tuple[DetectorConfig, TrajectoryParams]:
        """Detector settings and trajectory, taking MV*, T* and ZS from ``report`` unless overridden."""
        from .trajectory import periodicity_prior

        det = dict(self.detector)
        params = self.trajectory
        if report is not None and "zs_threshold" not in det:
            params = TrajectoryParams(params.cr, params.av, report.mv_star)
            det.setdefault("periodicity_prior", report.t_star)
            det["zs_threshold"] = report.zs_bar
        if "zs_threshold" not in det:
            raise ConfigError("detector.zs_threshold: missing threshold and no calibration report")
        det.setdefault("periodicity_prior", periodicity_prior(params, self.motion))
        return _build(DetectorConfig, det, "detector"), params


def _build(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {sorted(extra)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def _rect(v, where: str) -> Rect:
    if not (isinstance(v, (list, tuple)) and len(v) == 4):
        raise ConfigError(f"{where}: expected [xmin, ymin, xmax, ymax]")
    try:
        return Rect(*map(float, v))
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from None


def _pose(v, where: str) -> Pose2:
    try:
        return as_pose(v)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def _object(d: dict, where: str):
    kind = d.get("type")
    try:
        if kind == "disk":
            return Disk(tuple(d["center"]), float(d["radius"]), d.get("rigid", True))
        if kind == "square":
            return ConvexPolygon.square(tuple(d["center"]), float(d["side"]), d.get("rigid", True))
        if kind == "polygon":
            return ConvexPolygon([tuple(p) for p in d["vertices"]], d.get("rigid", True))
    except KeyError as e:
        raise ConfigError(f"{where}: missing field {e}") from None
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None
    raise ConfigError(f"{where}.type: expected disk, square or polygon, got {kind!r}")


def parse_scene(d: dict) -> Scene:
    if "workspace" not in d:
        raise ConfigError("scene.workspace: required")
    ws = _rect(d["workspace"], "scene.workspace")
    area = _rect(d["search_area"], "scene.search_area") if "search_area" in d else None
    objs = [_object(o, f"scene.objects[{i}]") for i, o in enumerate(d.get("objects", []))]
    try:
        return Scene(ws, objs, area)
    except ValueError as e:
        raise ConfigError(f"scene: {e}") from None


def parse_config(doc: dict) -> ExperimentConfig:
    known = {"medium", "scene", "trajectory", "motion", "path", "detector", "calibration",
             "exploration", "seeds", "output_dir"}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"unknown top-level field(s) {sorted(extra)}")
    if "medium" not in doc:
        raise ConfigError("medium: required")
    try:
        medium = get_medium(doc["medium"])
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"medium: {e}") from None

    scene = parse_scene(doc.get("scene", {"workspace": [-0.1, -0.1, 0.6, 0.1]}))
    traj = _build(TrajectoryParams, doc.get("trajectory", {}), "trajectory")
    motion = _build(MotionConstants, doc.get("motion", {}), "motion")

    path = dict(doc.get("path", {}))
    kind = path.pop("kind", "spiral")
    if kind not in ("spiral", "linear"):
        raise ConfigError(f"path.kind: expected spiral or linear, got {kind!r}")
    start = _pose(path.pop("start"), "path.start") if "start" in path else None
    goal = _pose(path.pop("goal"), "path.goal") if "goal" in path else None
    if path:
        raise ConfigError(f"path: unknown field(s) {sorted(path)}")

    cal = dict(doc.get("calibration", {}))
    report = cal.pop("report", None)
    calib = _build(CalibrationConfig, {"cr": traj.cr, "av": traj.av, **cal}, "calibration")

    expl = dict(doc.get("exploration", {}))
    x_init = _pose(expl.pop("x_init"), "exploration.x_init") if "x_init" in expl else None
    exploration = _build(ExplorationConfig, expl, "exploration")

    det = doc.get("detector", {})
    if not isinstance(det, dict):
        raise ConfigError("detector: expected an object")
    bad = set(det) - {f.name for f in fields(DetectorConfig)}
    if bad:
        raise ConfigError(f"detector: unknown field(s) {sorted(bad)}")

    seeds = doc.get("seeds", [0])
    if not (isinstance(seeds, list) and seeds and all(isinstance(s, int) for s in seeds)):
        raise ConfigError("seeds: expected a nonempty list of integers")

    return ExperimentConfig(medium, scene, traj, motion, start, goal, kind, dict(det), calib, report,
                            exploration, x_init, list(seeds), str(doc.get("output_dir", "out")))


def load_config(path) -> ExperimentConfig:
    text = FsPath(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(doc)

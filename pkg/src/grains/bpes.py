"""BOA-guided pre-touch exploration.

The probe rakes from a start to a goal while the jamming detector watches the
drag force. Clean stretches become absence labels, detector stops become
presence labels, and the BOA explorer picks the next goal. After a stop the
probe re-enters from the far end of the line to find the other side of the
object, stepping the entry point forward whenever the ground there is
blocked.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .anomaly import DetectorConfig, JammingDetector
from .boa import (
    DEFAULT_LENGTH_SCALE,
    DEFAULT_NOISE,
    DEFAULT_VARIANCE,
    GridSpec,
    StiffnessField,
    StiffnessObservation,
    acquisition,
    argmax_ei,
    export_field,
    fit_boa,
)
from .gp_core import SquaredExp
from .granular_sim import (
    MediumSpec,
    Scene,
    free_raking_trace,
    get_medium,
    min_distance_to_objects,
    min_distances,
    simulate_rake,
)
from .trajectory import (
    MotionConstants,
    Path,
    Pose2,
    TrajectoryParams,
    as_pose,
    gen_linear,
    gen_spiral,
    periodicity_prior,
)


@dataclass(frozen=True)
class ExplorationConfig:
    report_spacing: float = 0.01
    presence_label: float = 7.0
    absence_label: float = 0.0
    proximity_margin: float = 0.02
    step: float = 0.01
    max_slides: int = 40
    penetration_clearance: float = 0.015
    ei_floor: float = 1e-6
    outline_threshold: float = 3.5
    boa_length_scale: float = DEFAULT_LENGTH_SCALE
    boa_variance: float = DEFAULT_VARIANCE
    boa_noise: float = DEFAULT_NOISE
    resolution: float = 0.005

    def __post_init__(self):
        for name in ("report_spacing", "proximity_margin", "step", "penetration_clearance",
                     "boa_length_scale", "boa_variance", "resolution"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_slides < 1:
            raise ValueError("max_slides must be >= 1")

    def kernel(self) -> SquaredExp:
        return SquaredExp(self.boa_variance, self.boa_length_scale)


@dataclass
class ExplorationState:
    x_init: Pose2
    x_g: Pose2
    x_e: Pose2 | None = None
    x_p: Pose2 | None = None
    x_e1: Pose2 | None = None
    slide_count: int = 0
    phase: str = "Raking"


@dataclass
class ExplorationLog:
    events: list[dict] = field(default_factory=list)

    def add(self, event: str, **data) -> None:
        rec = {"event": event}
        for k, v in data.items():
            rec[k] = [float(v[0]), float(v[1])] if isinstance(v, (tuple, Pose2)) else v
        self.events.append(rec)

    def count(self, event: str) -> int:
        return sum(e["event"] == event for e in self.events)

    def write_jsonl(self, fp) -> None:
        for e in self.events:
            fp.write(json.dumps(e) + "\n")

    @classmethod
    def read_jsonl(cls, fp) -> "ExplorationLog":
        return cls([json.loads(line) for line in fp if line.strip()])


@dataclass
class BpesResult:
    log: ExplorationLog
    field: StiffnessField
    observations: list[StiffnessObservation]
    slides: int
    contacts: int
    min_clearance_cm: float
    finish_reason: str
    probe_path: np.ndarray


def quantize_reports(path_segment: Path, spacing: float, length: float | None = None) -> list[Pose2]:
    """Points at every ``spacing`` of arc length from the start, up to ``length``."""
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    total = path_segment.length if length is None else min(length, path_segment.length)
    k = int(math.floor(total / spacing + 1e-9))
    if k < 1:
        return []
    arcs = spacing * np.arange(1, k + 1)
    return [Pose2(float(x), float(y)) for x, y in path_segment.position_at(arcs)]


def estimate_outline(field: StiffnessField, threshold: float = 3.5) -> np.ndarray:
    return field.mean >= threshold


def footprint_mask(scene: Scene, grid: GridSpec, dilation_m: float = 0.0) -> np.ndarray:
    """Cells whose center lies within ``dilation_m`` of an object (inside counts as 0)."""
    d = min_distances(grid.centers(), scene)
    return (d <= dilation_m).reshape(grid.shape)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 1.0


def _toward(a: Pose2, b: Pose2, dist: float) -> Pose2:
    v = np.subtract(b, a)
    n = float(np.hypot(*v))
    if n == 0:
        return a
    return Pose2(*(np.asarray(a) + v / n * min(dist, n)))


def _dist(a, b) -> float:
    return float(math.hypot(a[0] - b[0], a[1] - b[1]))


class _Prober:
    """Runs slides: owns the simulator seeds, the detector and the sampling clock."""

    def __init__(self, scene, medium, params, det_cfg, consts, rng, prime_cycles):
        self.scene, self.medium, self.params = scene, medium, params
        self.det_cfg, self.consts, self.rng = det_cfg, consts, rng
        self.detector: JammingDetector | None = None
        self.arc_offset = 0.0
        ref_len = det_cfg.train_window + prime_cycles * det_cfg.periodicity_prior
        self._reference = free_raking_trace(
            medium, params, ref_len, consts, seed=int(rng.integers(2**31)), static_onset=False
        )

    def _prime(self):
        """Clean history ending at a cycle boundary, and the arc of the first live sample."""
        ref = self._reference
        ds = self.consts.sample_spacing(self.params.mv)
        # one cycle of the discretized path, so the phase carries over exactly
        cyc = gen_spiral((0.0, 0.0), (self.params.av, 0.0), self.params).length
        k = int(ref.arc[-1] // cyc)
        n = min(int(math.ceil(k * cyc / ds - 1e-9)), len(ref))
        return ref.drag[:n], n * ds - k * cyc

    def slide(self, start: Pose2, goal: Pose2, fresh: bool):
        path = gen_spiral(start, goal, self.params)
        if fresh:
            prime, self.arc_offset = self._prime()
            self.detector = JammingDetector(self.det_cfg, prime=prime)
        trace = simulate_rake(
            self.scene, self.medium, path, self.params.mv, self.consts,
            seed=int(self.rng.integers(2**31)), static_onset=fresh,
            first_sample_arc=self.arc_offset,
        )
        det = self.detector
        stop = None
        for i, x in enumerate(trace.drag):
            v = det.update(x)
            contact = trace.clearance[i] <= 0
            if (v is not None and v.kind != "Normal") or contact:
                stop = (i, v, contact)
                break
        if stop is None:
            ds = self.consts.sample_spacing(self.params.mv)
            self.arc_offset = trace.arc[-1] + ds - path.length
            return path, trace, None
        return path, trace.head(stop[0] + 1), stop


def _snap_goal(start: Pose2, goal: Pose2, av: float, area) -> Pose2 | None:
    """Move ``goal`` along the line so the distance is a whole number of advances."""
    d = _dist(start, goal)
    if d < av / 2:
        return None
    u = np.subtract(goal, start) / d
    for k in (round(d / av), math.floor(d / av)):
        g = Pose2(*(np.asarray(start) + u * max(1, k) * av))
        if area.contains([g]).all():
            return g
    return None


def run_bpes(
    scene: Scene,
    medium,
    detector_config: DetectorConfig,
    params: TrajectoryParams,
    config: ExplorationConfig = ExplorationConfig(),
    x_init=None,
    seed: int = 0,
    consts: MotionConstants = MotionConstants(),
    prime_cycles: int = 2,
) -> BpesResult:
    """Explore ``scene`` and return the event log and the final stiffness field."""
    medium: MediumSpec = get_medium(medium)
    area = scene.search_area
    x_init = as_pose(x_init if x_init is not None else (area.xmin, area.ymin))
    if not area.contains([x_init]).all():
        raise ValueError("x_init lies outside the search area")
    if min_distance_to_objects(x_init, scene) / 100.0 <= config.penetration_clearance:
        raise ValueError("x_init is too close to an object to penetrate")

    expected = periodicity_prior(params, consts)
    if detector_config.periodicity_prior != expected:
        warnings.warn(
            f"detector period {detector_config.periodicity_prior} does not match the trajectory "
            f"({expected}); was the detector calibrated for this medium and MV?",
            stacklevel=2,
        )

    rng = np.random.default_rng(seed)
    grid = GridSpec(area, config.resolution)
    kernel = config.kernel()
    log = ExplorationLog()
    obs: list[StiffnessObservation] = []
    prober = _Prober(scene, medium, params, detector_config, consts, rng, prime_cycles)
    probe_pts = [np.array(x_init)[None]]
    contacts = 0
    min_clear = math.inf

    def posterior():
        return fit_boa(obs, kernel, config.boa_noise, config.resolution / 2)

    centers = grid.centers()
    blocked = np.zeros(len(centers), dtype=bool)

    def suggest(here: Pose2):
        post = posterior()
        vals = acquisition(post, grid)
        # a goal must be at least one advance away from the probe, and goals
        # the probe already stopped short of are not proposed again
        near = np.hypot(*(centers - np.asarray(here)).T) < params.av
        vals = np.where(near | blocked, -np.inf, vals)
        if not np.isfinite(vals).any() or vals.max() < config.ei_floor:
            return None
        first = not obs
        idx = argmax_ei(vals, rng if first else None)
        return grid.cell_center(idx)

    def report_line(start: Pose2, goal: Pose2, progress: float):
        line = gen_linear(start, goal, 0.0005)
        for p in quantize_reports(line, config.report_spacing, progress):
            obs.append(StiffnessObservation(p, config.absence_label))
            log.add("AbsenceReported", pos=p)

    state = ExplorationState(x_init, x_init)
    reason = "max_slides"
    here = x_init
    fresh = True
    mode = "explore"
    goal = suggest(here)
    if goal is None:
        reason = "ei_floor"
    while goal is not None and state.slide_count < config.max_slides:
        goal_snapped = _snap_goal(here, goal, params.av, area)
        if goal_snapped is None:
            goal = None
            reason = "no_reachable_goal"
            break
        state.x_g = goal_snapped
        state.slide_count += 1
        state.phase = "Raking"
        log.add("SlideStarted", slide=state.slide_count, start=here, goal=goal_snapped, fresh=fresh)
        path, trace, stop = prober.slide(here, goal_snapped, fresh)
        probe_pts.append(trace.pos)
        min_clear = min(min_clear, float(trace.clearance.min()))
        c = params.av / (2 * math.pi)
        progress = c * float(path.phase_at(trace.arc[-1:])[0])
        report_line(here, goal_snapped, progress)

        if stop is None:
            # goal reached: chain a new slide from here
            here = goal_snapped
            fresh = False
            mode = "explore"
            state.x_p = state.x_e1 = None
            goal = suggest(here)
            if goal is None:
                reason = "ei_floor"
                break
            log.add("GoalReassigned", pos=goal)
            continue

        i, verdict, contact = stop
        blocked |= np.hypot(*(centers - np.asarray(goal_snapped)).T) <= config.proximity_margin
        x_c = Pose2(*map(float, trace.pos[-1]))
        contacts += bool(contact)
        # a contact without a warning is a detector failure: stop there all the same
        z = float(verdict.zscore) if verdict is not None else None
        log.add("JammingStop", pos=x_c, z=z, iteration=int(i), contact=bool(contact))
        obs.append(StiffnessObservation(x_c, config.presence_label))
        log.add("PresenceReported", pos=x_c)

        old_start = here
        state.x_p = x_c
        if mode == "explore":
            state.x_e = goal_snapped
            state.x_g = old_start
            state.x_e1 = None
            mode = "reverse"
        else:
            centre = _toward(old_start, state.x_g, progress)
            state.x_e = _toward(centre, state.x_g, config.step)

        state.phase = "Penetrating"
        entered = None
        while (_dist(state.x_e, state.x_p) > config.proximity_margin
               and _dist(state.x_e, state.x_g) >= params.av / 2):
            ok = min_distance_to_objects(state.x_e, scene) / 100.0 > config.penetration_clearance
            log.add("PenetrationAttempt", pos=state.x_e, success=bool(ok))
            if ok:
                entered = state.x_e
                if state.x_e1 is None:
                    state.x_e1 = state.x_e
                break
            state.x_e = _toward(state.x_e, state.x_g, config.step)

        state.phase = "Repositioning"
        fresh = True
        if entered is not None:
            here = entered
            goal = state.x_g
            continue
        here = state.x_e1 if state.x_e1 is not None else state.x_init
        mode = "explore"
        state.x_p = state.x_e1 = None
        goal = suggest(here)
        if goal is None:
            reason = "ei_floor"
            break
        log.add("GoalReassigned", pos=goal)

    state.phase = "Done"
    log.add("Finished", reason=reason, slides=state.slide_count)
    field_ = export_field(posterior(), grid)
    return BpesResult(log, field_, obs, state.slide_count, contacts, min_clear, reason,
                      np.vstack(probe_pts))

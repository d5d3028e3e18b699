"""Synthetic drag-force traces for a probe raking through a granular bed.

The force model is additive::

    drag = base * (1 + static boost) + A * sin(phase) + noise + J(d) [+ contact]

``phase`` is the spiral rotation angle, the noise is Gaussian with a
correlation length of one grain diameter along the path, and ``J`` is the
jamming force from objects inside the failure wedge ahead of the probe.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from .trajectory import MotionConstants, Path, Pose2, as_pose

MV_REF = 0.2
GRAIN_REF_MM = 1.0
# N/m of penetration once the probe is inside a rigid object.
CONTACT_STIFFNESS = 2000.0
# White measurement noise of the force sensor, N.
SENSOR_NOISE_STD = 0.01


@dataclass(frozen=True)
class MediumSpec:
    name: str
    grain_diameter: float  # mm
    roughness: float
    base_drag: float  # N
    periodic_amplitude: float  # N
    noise_std_ref: float  # N, for a 1 mm grain at MV_REF
    jamming_gain: float  # N
    rupture_distance: float  # cm
    static_friction_factor: float = 1.0
    static_friction_decay: int = 500  # iterations
    goal_swell: float = 0.0  # N per meter travelled, straight paths only
    swell_jitter: float = 0.5
    noise_correlation: float = 1.0  # grain diameters

    def __post_init__(self):
        for name in (
            "grain_diameter",
            "base_drag",
            "periodic_amplitude",
            "noise_std_ref",
            "jamming_gain",
            "goal_swell",
            "swell_jitter",
            "noise_correlation",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0 <= self.roughness <= 1:
            raise ValueError("roughness must lie in [0, 1]")
        if not self.rupture_distance > 0:
            raise ValueError("rupture_distance must be positive")
        if self.static_friction_factor < 1:
            raise ValueError("static_friction_factor must be >= 1")
        if self.static_friction_decay < 1:
            raise ValueError("static_friction_decay must be >= 1")

    def noise_std(self, mv: float) -> float:
        return self.noise_std_ref * (self.grain_diameter / GRAIN_REF_MM) * (MV_REF / mv)

    def jamming_force(self, d_cm) -> np.ndarray:
        """Jamming force for an object ``d_cm`` centimeters ahead inside the wedge."""
        d = np.asarray(d_cm, dtype=float)
        r = self.rupture_distance
        depth = np.clip((r - d) / r, 0.0, 1.0)
        return self.jamming_gain * (1 + self.roughness) * depth**2


# Rougher and finer media transmit jamming further; coarse grains are noisier.
PRESETS: dict[str, MediumSpec] = {
    "sand": MediumSpec(
        "sand",
        grain_diameter=1.0,
        roughness=0.9,
        base_drag=3.0,
        periodic_amplitude=0.6,
        noise_std_ref=0.08,
        jamming_gain=3.0,
        rupture_distance=6.0,
        static_friction_factor=1.01,
        static_friction_decay=500,
    ),
    "cassia_seed": MediumSpec(
        "cassia_seed",
        grain_diameter=3.0,
        roughness=0.4,
        base_drag=2.5,
        periodic_amplitude=0.5,
        noise_std_ref=0.04,
        jamming_gain=3.0,
        rupture_distance=4.5,
        static_friction_factor=1.01,
        static_friction_decay=500,
    ),
    "cat_litter": MediumSpec(
        "cat_litter",
        grain_diameter=3.5,
        roughness=0.7,
        base_drag=3.5,
        periodic_amplitude=0.6,
        noise_std_ref=0.035,
        jamming_gain=3.5,
        rupture_distance=6.5,
        static_friction_factor=1.01,
        static_friction_decay=500,
    ),
    "soybean": MediumSpec(
        "soybean",
        grain_diameter=6.5,
        roughness=0.2,
        base_drag=2.0,
        periodic_amplitude=0.5,
        noise_std_ref=0.03,
        jamming_gain=3.0,
        rupture_distance=3.0,
        static_friction_factor=1.01,
        static_friction_decay=500,
    ),
}


def get_medium(name_or_spec) -> MediumSpec:
    if isinstance(name_or_spec, MediumSpec):
        return name_or_spec
    if isinstance(name_or_spec, dict):
        base = name_or_spec.get("preset")
        fields = {k: v for k, v in name_or_spec.items() if k != "preset"}
        if base is not None:
            return replace(get_medium(base), **fields)
        return MediumSpec(**fields)
    try:
        return PRESETS[name_or_spec]
    except KeyError:
        raise KeyError(f"unknown medium preset {name_or_spec!r}; have {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError(f"degenerate rectangle {self}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    def contains(self, pts, tol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return (
            (pts[:, 0] >= self.xmin - tol)
            & (pts[:, 0] <= self.xmax + tol)
            & (pts[:, 1] >= self.ymin - tol)
            & (pts[:, 1] <= self.ymax + tol)
        )

    def contains_rect(self, other: "Rect") -> bool:
        return bool(self.contains([[other.xmin, other.ymin], [other.xmax, other.ymax]]).all())


@dataclass(frozen=True)
class Disk:
    center: Pose2
    radius: float
    rigid: bool = True

    def __post_init__(self):
        object.__setattr__(self, "center", as_pose(self.center))
        if not self.radius > 0:
            raise ValueError("disk radius must be positive")

    def bounds(self) -> Rect:
        x, y = self.center
        r = self.radius
        return Rect(x - r, y - r, x + r, y + r)

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center)
        return np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1]) - self.radius

    def wedge_distance(self, pts, heading, half_angle) -> np.ndarray:
        c = np.asarray(self.center)
        v = c - pts
        dc = np.hypot(v[:, 0], v[:, 1])
        r = self.radius
        out = np.full(len(pts), np.inf)
        safe = np.where(dc > 0, dc, 1.0)
        cosang = np.einsum("ij,ij->i", heading, v) / safe
        # the nearest surface point lies along the center direction
        out = np.where(cosang >= math.cos(half_angle), dc - r, out)
        c0 = dc**2 - r**2
        for sgn in (1.0, -1.0):
            ray = _rotate(heading, sgn * half_angle)
            b = np.einsum("ij,ij->i", ray, v)
            disc = b**2 - c0
            with np.errstate(invalid="ignore"):
                t = b - np.sqrt(disc)
            hit = (disc >= 0) & (t >= 0)
            out = np.where(hit, np.minimum(out, t), out)
        return np.where(dc <= r, 0.0, out)


@dataclass(frozen=True)
class ConvexPolygon:
    vertices: tuple[Pose2, ...]
    rigid: bool = True

    def __post_init__(self):
        v = np.array([as_pose(p) for p in self.vertices], dtype=float)
        if len(v) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        area2 = np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
        if abs(area2) < 1e-14:
            raise ValueError("degenerate polygon")
        if area2 < 0:
            v = v[::-1]
        e = np.roll(v, -1, axis=0) - v
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        if np.any(cross < -1e-14):
            raise ValueError("polygon is not convex")
        object.__setattr__(self, "vertices", tuple(Pose2(*map(float, p)) for p in v))

    @classmethod
    def square(cls, center, side: float, rigid: bool = True) -> "ConvexPolygon":
        x, y = as_pose(center)
        h = side / 2
        return cls(((x - h, y - h), (x + h, y - h), (x + h, y + h), (x - h, y + h)), rigid)

    @property
    def _arr(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    def bounds(self) -> Rect:
        v = self._arr
        return Rect(v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max())

    def _edges(self):
        a = self._arr
        return a, np.roll(a, -1, axis=0) - a

    def _inside(self, pts) -> np.ndarray:
        a, e = self._edges()
        rel = pts[:, None, :] - a[None, :, :]
        cross = e[None, :, 0] * rel[..., 1] - e[None, :, 1] * rel[..., 0]
        return np.all(cross >= 0, axis=1)

    def _nearest(self, pts):
        a, e = self._edges()
        rel = pts[:, None, :] - a[None, :, :]
        t = np.clip(np.einsum("nej,ej->ne", rel, e) / np.einsum("ej,ej->e", e, e), 0.0, 1.0)
        q = a[None] + t[..., None] * e[None]
        d = np.hypot(q[..., 0] - pts[:, None, 0], q[..., 1] - pts[:, None, 1])
        k = np.argmin(d, axis=1)
        rows = np.arange(len(pts))
        return q[rows, k], d[rows, k]

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        _, d = self._nearest(pts)
        return np.where(self._inside(pts), -d, d)

    def wedge_distance(self, pts, heading, half_angle) -> np.ndarray:
        q, dn = self._nearest(pts)
        v = q - pts
        safe = np.where(dn > 0, dn, 1.0)
        ok = np.einsum("ij,ij->i", heading, v) / safe >= math.cos(half_angle)
        out = np.where(ok, dn, np.inf)
        a, e = self._edges()
        ap = a[None] - pts[:, None]
        for sgn in (1.0, -1.0):
            ray = _rotate(heading, sgn * half_angle)
            denom = ray[:, None, 0] * e[None, :, 1] - ray[:, None, 1] * e[None, :, 0]
            with np.errstate(divide="ignore", invalid="ignore"):
                s = (ap[..., 0] * e[None, :, 1] - ap[..., 1] * e[None, :, 0]) / denom
                w = (ap[..., 0] * ray[:, None, 1] - ap[..., 1] * ray[:, None, 0]) / denom
            hit = (denom != 0) & (s >= 0) & (w >= 0) & (w <= 1)
            s = np.where(hit, s, np.inf).min(axis=1)
            out = np.minimum(out, s)
        return np.where(self._inside(pts), 0.0, out)


ObjectSpec = Disk | ConvexPolygon


def _rotate(v: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.column_stack([c * v[:, 0] - s * v[:, 1], s * v[:, 0] + c * v[:, 1]])


@dataclass(frozen=True)
class Scene:
    workspace: Rect
    objects: tuple = ()
    search_area: Rect | None = None

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.search_area is None:
            object.__setattr__(self, "search_area", self.workspace)
        if not self.workspace.contains_rect(self.search_area):
            raise ValueError("search_area must lie inside workspace")
        for obj in self.objects:
            if not self.workspace.contains_rect(obj.bounds()):
                raise ValueError(f"object {obj} extends outside the workspace")

    def empty(self) -> "Scene":
        return replace(self, objects=())


@dataclass(frozen=True)
class WedgeParams:
    half_angle: float = math.radians(30.0)
    reach: float = 6.0  # cm

    def __post_init__(self):
        if not 0 < self.half_angle < math.pi / 2:
            raise ValueError("half_angle must lie in (0, pi/2)")
        if not self.reach > 0:
            raise ValueError("reach must be positive")


def default_wedge(medium: MediumSpec) -> WedgeParams:
    return WedgeParams(reach=medium.rupture_distance)


@dataclass(eq=False)
class ForceTrace:
    """Force samples at a fixed rate. ``clearance`` is simulator ground truth (cm)."""

    iteration: np.ndarray
    t: np.ndarray
    pos: np.ndarray
    drag: np.ndarray
    fs: float
    mv: float
    clearance: np.ndarray | None = None
    arc: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.drag)

    def head(self, n: int) -> "ForceTrace":
        cut = lambda a: None if a is None else a[:n]  # noqa: E731
        return ForceTrace(
            self.iteration[:n], self.t[:n], self.pos[:n], self.drag[:n], self.fs, self.mv,
            cut(self.clearance), cut(self.arc), dict(self.meta),
        )

    @classmethod
    def from_values(cls, drag, fs: float = 62.5, mv: float = MV_REF) -> "ForceTrace":
        drag = np.asarray(drag, dtype=float)
        it = np.arange(len(drag))
        return cls(it, it / fs, np.zeros((len(drag), 2)), drag, fs, mv)


def min_distances(points, scene: Scene) -> np.ndarray:
    """Distance in meters from each point to the nearest object surface (0 inside)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if not scene.objects:
        return np.full(len(pts), np.inf)
    d = np.min([obj.signed_distance(pts) for obj in scene.objects], axis=0)
    return np.maximum(d, 0.0)


def min_distance_to_objects(pos, scene: Scene) -> float:
    """Distance in centimeters from ``pos`` to the nearest object; inf when there is none."""
    p = as_pose(pos)
    return float(min_distances([p], scene)[0] * 100.0)


def penetration_depth(points, scene: Scene) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if not scene.objects:
        return np.zeros(len(pts))
    d = np.min([obj.signed_distance(pts) for obj in scene.objects if obj.rigid] or [np.full(len(pts), np.inf)], axis=0)
    return np.maximum(-d, 0.0)


def wedge_contains(pos, heading: float, wedge: WedgeParams, point) -> bool:
    """Whether ``point`` lies in the failure wedge ahead of ``pos``. Distances in meters, reach in cm."""
    p, q = as_pose(pos), as_pose(point)
    dx, dy = q.x - p.x, q.y - p.y
    dist = math.hypot(dx, dy)
    if dist == 0:
        return True
    if dist > wedge.reach / 100.0:
        return False
    ang = math.atan2(dy, dx) - heading
    ang = (ang + math.pi) % (2 * math.pi) - math.pi
    return abs(ang) <= wedge.half_angle


def wedge_distances(pts, headings, scene: Scene, wedge: WedgeParams) -> np.ndarray:
    """Distance (cm) from each probe position to the nearest object part inside its wedge."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if not scene.objects:
        return np.full(len(pts), np.inf)
    d = np.min([obj.wedge_distance(pts, headings, wedge.half_angle) for obj in scene.objects], axis=0)
    d = d * 100.0
    return np.where(d <= wedge.reach, d, np.inf)


def packing_density(mass: float, density: float, area: float, height: float) -> float:
    """Packing fraction of a granular bed of given mass filling ``area`` up to ``height``."""
    if min(mass, density, area, height) <= 0:
        raise ValueError("all inputs must be positive")
    return mass / (density * area * height)


def _correlated_noise(rng, n: int, std: float, spacing: float, corr_length: float) -> np.ndarray:
    if std == 0 or n == 0:
        return np.zeros(n)
    rho = math.exp(-spacing / corr_length) if corr_length > 0 else 0.0
    white = rng.standard_normal(n)
    # stationary AR(1): first sample drawn from the marginal
    white[1:] *= math.sqrt(1 - rho**2)
    return std * lfilter([1.0], [1.0, -rho], white)


def simulate_rake(
    scene: Scene,
    medium: MediumSpec,
    path: Path,
    mv: float,
    consts: MotionConstants = MotionConstants(),
    seed: int = 0,
    *,
    wedge: WedgeParams | None = None,
    static_onset: bool = True,
    stop_at_contact: bool = False,
    sensor_noise: float = SENSOR_NOISE_STD,
    first_sample_arc: float = 0.0,
) -> ForceTrace:
    """Simulate the drag force sampled at ``consts.fs`` while raking along ``path``.

    The probe moves at ``v0 * mv``. Set ``static_onset=False`` when the probe
    continues from an earlier rake without stopping; ``first_sample_arc``
    then keeps the sampling clock continuous across the two paths.
    """
    if not 0 < mv <= 1:
        raise ValueError("mv must lie in (0, 1]")
    medium = get_medium(medium)
    wedge = wedge or default_wedge(medium)
    if not scene.workspace.contains(path.waypoints).all():
        raise ValueError("path leaves the workspace")
    if penetration_depth([path.start], scene)[0] > 0 or min_distances([path.start], scene)[0] == 0:
        raise ValueError("path starts inside an object")

    rng = np.random.default_rng(seed)
    ds = consts.sample_spacing(mv)
    if not 0 <= first_sample_arc < ds:
        raise ValueError("first_sample_arc must lie in [0, sample spacing)")
    n = int(math.floor((path.length - first_sample_arc) / ds + 1e-9)) + 1
    it = np.arange(n)
    arc = first_sample_arc + it * ds
    pos = path.position_at(arc)
    heading = path.heading_at(arc)

    drag = np.full(n, medium.base_drag)
    if static_onset and medium.static_friction_factor > 1:
        decay = medium.static_friction_decay
        boost = (medium.static_friction_factor - 1) * np.clip(1 - it / decay, 0.0, None)
        drag = drag * (1 + boost)
    phase = path.phase_at(arc)
    if phase is not None:
        drag = drag + medium.periodic_amplitude * np.sin(phase)
    elif medium.goal_swell > 0:
        rate = medium.goal_swell * max(0.0, 1 + medium.swell_jitter * rng.standard_normal())
        drag = drag + rate * arc
    corr = medium.noise_correlation * medium.grain_diameter / 1000.0
    drag = drag + _correlated_noise(rng, n, medium.noise_std(mv), ds, corr)
    if sensor_noise > 0:
        drag = drag + sensor_noise * rng.standard_normal(n)

    clearance = min_distances(pos, scene) * 100.0
    if scene.objects:
        dw = wedge_distances(pos, heading, scene, wedge)
        drag = drag + medium.jamming_force(dw)
        drag = drag + CONTACT_STIFFNESS * penetration_depth(pos, scene)
    drag = np.maximum(drag, 0.0)

    trace = ForceTrace(it, it / consts.fs, pos, drag, consts.fs, mv, clearance, arc)
    if stop_at_contact:
        hit = np.flatnonzero(clearance <= 0)
        if len(hit):
            trace = trace.head(int(hit[0]) + 1)
    return trace


def write_trace_csv(trace: ForceTrace, fp) -> None:
    w = csv.writer(fp)
    w.writerow(["iteration", "t_s", "x_m", "y_m", "drag_N"])
    for i, t, p, f in zip(trace.iteration, trace.t, trace.pos, trace.drag):
        w.writerow([int(i), f"{t:.9g}", f"{p[0]:.9g}", f"{p[1]:.9g}", f"{f:.9g}"])


def read_trace_csv(fp, mv: float = MV_REF) -> ForceTrace:
    rows = list(csv.DictReader(fp))
    it = np.array([int(r["iteration"]) for r in rows])
    t = np.array([float(r["t_s"]) for r in rows])
    pos = np.array([[float(r["x_m"]), float(r["y_m"])] for r in rows]).reshape(-1, 2)
    drag = np.array([float(r["drag_N"]) for r in rows])
    fs = float(1.0 / (t[1] - t[0])) if len(t) > 1 else 62.5
    return ForceTrace(it, t, pos, drag, fs, mv)


def free_raking_trace(
    medium: MediumSpec,
    params,
    n_samples: int,
    consts: MotionConstants = MotionConstants(),
    seed: int = 0,
    **kwargs,
) -> ForceTrace:
    """Trace of ``n_samples`` from a straight spiral rake through an object-free bed."""
    from .trajectory import gen_spiral

    ds = consts.sample_spacing(params.mv)
    cycles = math.ceil((n_samples + 1) * ds / params.av) + 1
    length = cycles * params.av
    margin = 2 * params.cr + 0.01
    scene = Scene(Rect(-margin, -margin, length + margin, margin))
    path = gen_spiral((0.0, 0.0), (length, 0.0), params)
    return simulate_rake(scene, medium, path, params.mv, consts, seed, **kwargs).head(n_samples)

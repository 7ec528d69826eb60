"""Ground-truthed fixtures: trajectories, rig motions, noise, and scans.

Stands in for the live odometry front end: it produces planar
reference-sensor trajectories, rigidly derived target-sensor motions,
zero-mean Gaussian noise injected in the tangent space of each incremental
motion, and synthetic scans of planar scenes from a multi-beam
range-scanner model. Everything is a pure function of (inputs, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyScan
from .geometry import Pose, Rotation, pose_compose, pose_invert, se3_exp, se3_log
from .handeye import MotionPair
from .refinement import PointCloud

TRAJECTORY_KINDS = ("loop", "figure-eight", "low-rotation-sweep")
_KIND_ALIASES = {"eight": "figure-eight", "sweep": "low-rotation-sweep"}

# Total heading change of the low-rotation kind (rad); the hardest case for
# motion-based calibration is a path with little rotation.
_SWEEP_TOTAL_YAW = 0.15


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class Trajectory:
    """World-frame poses of one sensor at integer timestamps."""

    sensor: str
    timestamps: tuple[int, ...]
    poses: tuple[Pose, ...]

    def __post_init__(self):
        if len(self.timestamps) != len(self.poses):
            raise ValueError("timestamps and poses must have equal length")
        if len(self.poses) < 3:
            raise ValueError("a trajectory needs at least 3 poses (K >= 2)")
        if any(b <= a for a, b in zip(self.timestamps, self.timestamps[1:])):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.poses)

    def motions(self) -> list[tuple[int, Pose]]:
        """Incremental motions keyed by the end timestamp of each interval."""
        out = []
        for i in range(1, len(self.poses)):
            motion = pose_compose(pose_invert(self.poses[i - 1]), self.poses[i])
            out.append((self.timestamps[i], motion))
        return out


@dataclass(frozen=True)
class RigConfig:
    """Ground-truth extrinsic of each target sensor; immutable during a run."""

    reference: str
    targets: dict[str, Pose]

    def pair(self, target: str) -> Pose:
        return self.targets[target]


@dataclass(frozen=True)
class Patch:
    """Finite convex planar polygon with a unit normal."""

    corners: np.ndarray  # (M, 3)
    normal: np.ndarray  # (3,)

    def __post_init__(self):
        corners = np.asarray(self.corners, dtype=float).reshape(-1, 3).copy()
        if corners.shape[0] < 3:
            raise ValueError("a patch needs at least 3 corners")
        n = np.asarray(self.normal, dtype=float).reshape(3).copy()
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            raise ValueError("patch normal must be nonzero")
        n /= norm
        corners.flags.writeable = False
        n.flags.writeable = False
        object.__setattr__(self, "corners", corners)
        object.__setattr__(self, "normal", n)

    @staticmethod
    def from_corners(corners) -> "Patch":
        corners = np.asarray(corners, dtype=float)
        n = np.cross(corners[1] - corners[0], corners[2] - corners[0])
        return Patch(corners, n)


@dataclass(frozen=True)
class SceneModel:
    """Planar patches plus one designated ground plane (z = 0)."""

    patches: tuple[Patch, ...]
    ground_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "patches", tuple(self.patches))
        ground = self.patches[self.ground_index]
        if abs(abs(ground.normal[2]) - 1.0) > 1e-9 or np.any(
            np.abs(ground.corners[:, 2]) > 1e-9
        ):
            raise ValueError("designated ground patch must lie in the z = 0 plane")


@dataclass(frozen=True)
class ScannerModel:
    """Spinning multi-beam scanner: uniform elevation rings, uniform azimuth."""

    beams: int = 16
    vertical_fov: float = 30.0  # total, degrees
    horizontal_resolution: float = 2.0  # degrees per azimuth step
    max_range: float = 80.0  # meters
    range_noise_std: float = 0.0  # meters, 1-sigma along the ray

    def __post_init__(self):
        if self.beams < 1:
            raise ValueError("beam count must be >= 1")
        if self.max_range <= 0:
            raise ValueError("max range must be positive")

    def ray_directions(self) -> np.ndarray:
        """Unit ray directions in the sensor frame, (beams * n_az, 3)."""
        half = 0.5 * math.radians(self.vertical_fov)
        if self.beams == 1:
            elevations = np.array([-half])
        else:
            elevations = np.linspace(-half, half, self.beams)
        azimuths = np.radians(
            np.arange(0.0, 360.0, self.horizontal_resolution, dtype=float)
        )
        el, az = np.meshgrid(elevations, azimuths, indexing="ij")
        ce = np.cos(el)
        return np.column_stack(
            [(ce * np.cos(az)).ravel(), (ce * np.sin(az)).ravel(), np.sin(el).ravel()]
        )


# ---------------------------------------------------------------------------
# trajectory generation


def _progress(k: int, rng) -> np.ndarray:
    """K jittered steps accumulating to exactly 1."""
    steps = rng.uniform(0.85, 1.15, size=k)
    return np.concatenate([[0.0], np.cumsum(steps) / steps.sum()])


def generate_trajectory(
    kind: str, k: int, scale: float, seed: int, sensor: str = "a", height: float = 0.0
) -> Trajectory:
    """Planar path of K incremental motions (roll = pitch = 0, constant z).

    loop drives a full circle of radius scale; figure-eight follows a
    lemniscate with heading reversals; low-rotation-sweep is a gentle arc
    whose total yaw change stays small. The seed jitters the per-step
    progress, so different seeds give distinct paths of the same shape.
    """
    kind = _KIND_ALIASES.get(kind, kind)
    if kind not in TRAJECTORY_KINDS:
        raise ValueError(f"unknown trajectory kind {kind!r}")
    if k < 2:
        raise ValueError("need K >= 2 motions")
    rng = np.random.default_rng(seed)
    u = _progress(k, rng)
    # Curvature must vary along the path: motions drawn from a single
    # constant-twist arc leave the extrinsic observable only up to the
    # shared screw axis, so every kind wobbles its heading.
    if kind == "loop":
        ang = 4.0 * math.pi * u  # two laps
        phase = rng.uniform(0.0, 2.0 * math.pi)
        x = scale * np.cos(ang)
        y = scale * np.sin(ang)
        yaw = ang + 0.5 * math.pi + 0.3 * np.sin(3.0 * ang + phase)
    elif kind == "figure-eight":
        ang = 4.0 * math.pi * u  # two laps
        x = scale * np.sin(ang)
        y = 0.5 * scale * np.sin(2.0 * ang)
        yaw = np.arctan2(np.cos(2.0 * ang), np.cos(ang))
    else:  # low-rotation-sweep
        # Mostly-straight run with two brief, gentle bends. The heading is
        # monotone, so the integrated yaw change stays below 0.2 rad, and
        # concentrating it into short events keeps the turn steps above the
        # noise floor instead of spreading them into nothing.
        total = _SWEEP_TOTAL_YAW * rng.uniform(0.8, 1.0)
        split = rng.uniform(0.4, 0.6)
        centers = (rng.uniform(0.25, 0.4), rng.uniform(0.6, 0.75))
        width = 2.5 / k
        yaw = np.zeros_like(u)
        for amp, center in zip((split * total, (1.0 - split) * total), centers):
            t = np.clip((u - center) / width + 0.5, 0.0, 1.0)
            yaw = yaw + amp * (3.0 * t**2 - 2.0 * t**3)
        step = 2.0 * math.pi * scale / k
        x = np.concatenate([[0.0], np.cumsum(step * np.diff(u) * k * np.cos(yaw[1:]))])
        y = np.concatenate([[0.0], np.cumsum(step * np.diff(u) * k * np.sin(yaw[1:]))])
    poses = tuple(
        Pose(Rotation.about_z(float(w)), np.array([float(px), float(py), height]))
        for px, py, w in zip(x, y, yaw)
    )
    return Trajectory(sensor, tuple(range(k + 1)), poses)


def target_trajectory(ref: Trajectory, extrinsic: Pose, sensor: str = "b") -> Trajectory:
    """World poses of the rigidly mounted target sensor."""
    poses = tuple(pose_compose(p, extrinsic) for p in ref.poses)
    return Trajectory(sensor, ref.timestamps, poses)


# ---------------------------------------------------------------------------
# motion derivation and noise


def derive_target_motions(ref: Trajectory, extrinsic: Pose) -> list[MotionPair]:
    """Noise-free motion pairs (A_k, B_k) with B_k = X^-1 A_k X."""
    inv_x = pose_invert(extrinsic)
    pairs = []
    for k, motion_a in ref.motions():
        motion_b = pose_compose(inv_x, pose_compose(motion_a, extrinsic))
        pairs.append(MotionPair.from_motions(k, motion_a, motion_b))
    return pairs


def _perturb(motion: Pose, sigma: float, rng) -> Pose:
    xi = se3_log(motion)
    return se3_exp(xi + rng.normal(0.0, sigma, size=6))


def perturb_motion(motion: Pose, sigma2: float, seed: int) -> Pose:
    """Zero-mean Gaussian noise on the motion's tangent-space 6-vector."""
    if sigma2 < 0:
        raise ValueError("variance must be nonnegative")
    if sigma2 == 0:
        return motion
    return _perturb(motion, math.sqrt(sigma2), np.random.default_rng(seed))


def perturb_motion_pairs(
    pairs: list[MotionPair], sigma2: float, seed: int
) -> list[MotionPair]:
    """Perturb both motions of every pair i.i.d.; residuals recomputed."""
    if sigma2 < 0:
        raise ValueError("variance must be nonnegative")
    if sigma2 == 0:
        return list(pairs)
    sigma = math.sqrt(sigma2)
    rng = np.random.default_rng(seed)
    out = []
    for p in pairs:
        noisy_a = _perturb(p.motion_a, sigma, rng)
        noisy_b = _perturb(p.motion_b, sigma, rng)
        out.append(MotionPair.from_motions(p.index, noisy_a, noisy_b))
    return out


# ---------------------------------------------------------------------------
# scanning


def _inside_convex(points: np.ndarray, patch: Patch) -> np.ndarray:
    corners = patch.corners
    m = corners.shape[0]
    signs = np.empty((m, points.shape[0]))
    for i in range(m):
        edge = corners[(i + 1) % m] - corners[i]
        signs[i] = np.cross(edge, points - corners[i]) @ patch.normal
    tol = 1e-9
    return np.all(signs >= -tol, axis=0) | np.all(signs <= tol, axis=0)


def scan_scene(
    scene: SceneModel,
    sensor_pose: Pose,
    scanner: ScannerModel,
    seed: int,
    sensor: str = "",
    timestamp: int = 0,
) -> PointCloud:
    """Nearest ray-patch intersections, expressed in the sensor frame.

    Occlusion is respected (closest hit per ray wins), ground-plane hits
    are labeled, and range noise is applied along each ray. Raises
    EmptyScan when nothing is hit.
    """
    dirs_sensor = scanner.ray_directions()
    dirs_world = sensor_pose.rotation.apply(dirs_sensor)
    origin = sensor_pose.translation
    n_rays = dirs_world.shape[0]
    best_t = np.full(n_rays, np.inf)
    best_patch = np.full(n_rays, -1, dtype=int)
    for pi, patch in enumerate(scene.patches):
        n = patch.normal
        denom = dirs_world @ n
        offset = -(origin @ n - patch.corners[0] @ n)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(denom) > 1e-12, offset / denom, np.inf)
        candidate = (t > 1e-6) & (t <= scanner.max_range) & (t < best_t)
        if not candidate.any():
            continue
        hit_pts = origin + t[candidate, None] * dirs_world[candidate]
        inside = _inside_convex(hit_pts, patch)
        sel = np.nonzero(candidate)[0][inside]
        best_t[sel] = t[sel]
        best_patch[sel] = pi
    hit = best_patch >= 0
    if not hit.any():
        raise EmptyScan("no ray intersected any scene patch")
    ranges = best_t[hit]
    if scanner.range_noise_std > 0:
        rng = np.random.default_rng(seed)
        ranges = ranges + rng.normal(0.0, scanner.range_noise_std, size=ranges.shape)
    points = ranges[:, None] * dirs_sensor[hit]
    ground = best_patch[hit] == scene.ground_index
    return PointCloud(sensor, timestamp, points, ground)


# ---------------------------------------------------------------------------
# scene and rig presets


def make_box_walls(center_xy, size_xy, height: float, yaw: float) -> list[Patch]:
    """Four vertical wall patches of a rectangular building footprint."""
    cx, cy = center_xy
    sx, sy = 0.5 * size_xy[0], 0.5 * size_xy[1]
    rot = Rotation.about_z(yaw)
    footprint = np.array([[sx, sy], [-sx, sy], [-sx, -sy], [sx, -sy]])
    corners = np.array([rot.apply(np.array([fx, fy, 0.0]))[:2] + [cx, cy] for fx, fy in footprint])
    walls = []
    for i in range(4):
        a = corners[i]
        b = corners[(i + 1) % 4]
        quad = np.array(
            [
                [a[0], a[1], 0.0],
                [b[0], b[1], 0.0],
                [b[0], b[1], height],
                [a[0], a[1], height],
            ]
        )
        walls.append(Patch.from_corners(quad))
    return walls


def make_urban_scene(extent: float = 40.0) -> SceneModel:
    """Ground plane plus several buildings at distinct orientations.

    The wall normals span multiple horizontal directions, so registration
    is constrained in x, y, and yaw; the ground constrains z, roll, pitch.
    """
    e = extent
    ground = Patch(
        np.array([[-e, -e, 0.0], [e, -e, 0.0], [e, e, 0.0], [-e, e, 0.0]]),
        np.array([0.0, 0.0, 1.0]),
    )
    patches = [ground]
    patches += make_box_walls((14.0, 3.0), (10.0, 6.0), 7.0, 0.35)
    patches += make_box_walls((-11.0, 10.0), (8.0, 5.0), 6.0, 1.25)
    patches += make_box_walls((-3.0, -14.0), (12.0, 5.0), 8.0, 2.30)
    patches += make_box_walls((9.0, -11.0), (6.0, 6.0), 5.0, -0.7)
    return SceneModel(tuple(patches), ground_index=0)


def rig_preset(name: str) -> Pose:
    """Ground-truth rig transforms used throughout the test fixtures.

    "simulated": the two-sensor simulation platform mounting; "front" and
    "tail" mirror a three-sensor vehicle where the tail unit faces
    backward (~180 degrees of yaw offset).
    """
    presets = {
        "simulated": ((0.0, 3.14, 1.57), (-2.5, 1.5, 0.0)),
        "front": ((0.01, 0.08, 0.03), (0.42, 0.00, -1.26)),
        "tail": ((-0.02, 0.01, -3.11), (-2.11, 0.06, -1.18)),
    }
    if name not in presets:
        raise ValueError(f"unknown rig preset {name!r}; have {sorted(presets)}")
    (roll, pitch, yaw), t = presets[name]
    return Pose(Rotation.from_rpy(roll, pitch, yaw), np.array(t))

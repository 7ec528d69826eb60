"""Appearance-based refinement of an initialized extrinsic.

Completes the unobservable t_z by aligning ground-plane centroids, gates
frames by an overlap factor computed with KD-tree range searches, registers
the overlapping subsets with point-to-plane ICP, and averages the
lowest-registration-error candidates into the refined estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateGeometry,
    EmptyCloud,
    InsufficientCorrespondences,
    NoGroundOverlap,
    NormalEstimationFailure,
    NoUsableFrames,
)
from .geometry import Pose, Rotation, rotation_exp
from .handeye import Extrinsics, SolverDiagnostics


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class PointCloud:
    """Points in a named sensor frame at an integer timestamp.

    ground is an optional boolean mask marking ground-surface returns.
    """

    sensor: str
    timestamp: int
    points: np.ndarray  # (N, 3) float64
    ground: np.ndarray | None = None  # (N,) bool

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3).copy()
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.ground is not None:
            mask = np.asarray(self.ground, dtype=bool).reshape(-1).copy()
            if mask.shape[0] != pts.shape[0]:
                raise ValueError("ground mask length must equal point count")
            mask.flags.writeable = False
            object.__setattr__(self, "ground", mask)

    def __len__(self) -> int:
        return self.points.shape[0]

    def select(self, mask) -> "PointCloud":
        ground = self.ground[mask] if self.ground is not None else None
        return PointCloud(self.sensor, self.timestamp, self.points[mask], ground)

    def ground_points(self) -> np.ndarray:
        if self.ground is None:
            return self.points
        return self.points[self.ground]


@dataclass(frozen=True)
class Plane:
    """n . p + d = 0 with unit normal; ground normals point up (n_z >= 0)."""

    normal: np.ndarray
    d: float
    inlier_count: int
    inlier_rms: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3).copy()
        norm = np.linalg.norm(n)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"plane normal must be unit, got norm {norm}")
        n /= norm
        n.flags.writeable = False
        object.__setattr__(self, "normal", n)

    def distances(self, points) -> np.ndarray:
        return np.abs(np.asarray(points) @ self.normal + self.d)


@dataclass(frozen=True)
class RegistrationResult:
    """One frame's ICP outcome from the completed initial estimate."""

    transform: Pose
    error: float  # mean absolute point-to-plane distance, m
    iterations: int
    omega: float
    converged: bool


@dataclass(frozen=True)
class FrameOutcome:
    """Per-frame bookkeeping behind the refined estimate."""

    frame: int
    omega: float
    result: RegistrationResult | None
    selected: bool = False
    note: str = ""


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 50
    tolerance: float = 1e-6
    k_normals: int = 10
    trim_factor: float = 3.0
    min_correspondences: int = 6


@dataclass(frozen=True)
class RefineParams:
    overlap_radius: float = 10.0
    omega_gate: float = 0.8
    candidate_count: int = 10
    ransac_iterations: int = 500
    ransac_inlier_dist: float = 0.05
    seed: int = 0
    icp: IcpParams = field(default_factory=IcpParams)


# ---------------------------------------------------------------------------
# RANSAC plane fitting


def _fit_plane_least_squares(points):
    centroid = points.mean(axis=0)
    centered = points - centroid
    cov = centered.T @ centered
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[1] <= 1e-12 * max(eigvals[2], 1e-300):
        raise DegenerateGeometry("points are collinear; plane is undefined")
    normal = eigvecs[:, 0]
    return _canonical_normal(normal), centroid


def _canonical_normal(n):
    n = n / np.linalg.norm(n)
    for c in (n[2], n[0], n[1]):
        if c > 0.0:
            return n
        if c < 0.0:
            return -n
    return n


def _ransac_trials(inlier_ratio, confidence=0.99, sample_size=3):
    """Trials needed so a pure-inlier sample appears with given confidence."""
    eps = min(max(inlier_ratio, 1e-6), 1.0 - 1e-12)
    return math.ceil(math.log(1.0 - confidence) / math.log(1.0 - eps**sample_size))


def ransac_plane(points, max_iterations=500, inlier_dist=0.05, seed=0) -> Plane:
    """RANSAC plane fit, refit to the consensus set by least squares.

    Iterations stop at the analytic 99%-confidence count for the running
    inlier ratio or at max_iterations, whichever is lower. Deterministic
    for a fixed seed.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = pts.shape[0]
    if n < 3:
        raise DegenerateGeometry(f"need >= 3 points, got {n}")
    rng = np.random.default_rng(seed)
    best_count = -1
    best_mask = None
    trials_needed = max_iterations
    trial = 0
    while trial < min(max_iterations, trials_needed):
        trial += 1
        idx = rng.choice(n, size=3, replace=False)
        p0, p1, p2 = pts[idx]
        normal = np.cross(p1 - p0, p2 - p0)
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue
        normal /= norm
        dist = np.abs((pts - p0) @ normal)
        mask = dist < inlier_dist
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            trials_needed = _ransac_trials(count / n)
    if best_mask is None or best_count < 3:
        raise DegenerateGeometry("no valid plane hypothesis (collinear samples?)")
    normal, centroid = _fit_plane_least_squares(pts[best_mask])
    d = -float(normal @ centroid)
    resid = pts[best_mask] @ normal + d
    # refit can move points across the threshold; report the refit consensus
    final_mask = np.abs(pts @ normal + d) < inlier_dist
    resid = pts[final_mask] @ normal + d
    rms = float(np.sqrt(np.mean(resid**2))) if final_mask.any() else 0.0
    return Plane(normal, d, int(final_mask.sum()), rms)


# ---------------------------------------------------------------------------
# ground alignment for t_z


def estimate_tz(
    ground_pairs,
    rotation: Rotation,
    inlier_dist: float = 0.05,
    max_iterations: int = 500,
    seed: int = 0,
) -> float:
    """Mean z-offset between paired ground centroids under the rotation.

    Each side of each frame is RANSAC-filtered before its centroid is
    taken; frames without ground inliers on both sides are skipped.
    """
    offsets = []
    for k, (cloud_a, cloud_b) in enumerate(ground_pairs):
        ga = np.asarray(cloud_a.ground_points() if isinstance(cloud_a, PointCloud) else cloud_a)
        gb = np.asarray(cloud_b.ground_points() if isinstance(cloud_b, PointCloud) else cloud_b)
        if ga.shape[0] < 3 or gb.shape[0] < 3:
            continue
        try:
            plane_a = ransac_plane(ga, max_iterations, inlier_dist, seed=seed + 2 * k)
            plane_b = ransac_plane(gb, max_iterations, inlier_dist, seed=seed + 2 * k + 1)
        except DegenerateGeometry:
            continue
        mask_a = plane_a.distances(ga) < inlier_dist
        mask_b = plane_b.distances(gb) < inlier_dist
        if not mask_a.any() or not mask_b.any():
            continue
        c_a = ga[mask_a].mean(axis=0)
        c_b = gb[mask_b].mean(axis=0)
        offsets.append(c_a[2] - float(rotation.apply(c_b)[2]))
    if not offsets:
        raise NoGroundOverlap("no frame has ground inliers on both sides")
    return float(np.mean(offsets))


# ---------------------------------------------------------------------------
# spatial index


def build_index(cloud) -> cKDTree:
    """Exact nearest-neighbor index over a cloud (or raw (N,3) array)."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    if pts.shape[0] == 0:
        raise EmptyCloud("cannot index an empty cloud")
    return cKDTree(pts)


def nearest(index: cKDTree, point) -> tuple[np.ndarray, float]:
    """Closest indexed point to a query and its Euclidean distance."""
    dist, idx = index.query(np.asarray(point, dtype=float))
    return index.data[idx], float(dist)


# ---------------------------------------------------------------------------
# overlap filter


def overlap_filter(cloud_a: PointCloud, cloud_b: PointCloud, t_init: Pose, radius: float):
    """Retain the mutually visible subsets and score the frame.

    S_a holds points of a within radius of some b-point transformed by the
    current estimate; S_b holds points of b whose transform lies within
    radius of some a-point. The overlap factor is the product of the two
    retained fractions, in [0, 1].
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if len(cloud_a) == 0 or len(cloud_b) == 0:
        raise EmptyCloud("overlap filter needs nonempty clouds")
    b_in_a = t_init.apply(cloud_b.points)
    tree_b = cKDTree(b_in_a)
    dist_a, _ = tree_b.query(cloud_a.points)
    mask_a = dist_a < radius
    tree_a = cKDTree(cloud_a.points)
    dist_b, _ = tree_a.query(b_in_a)
    mask_b = dist_b < radius
    omega = (mask_a.mean()) * (mask_b.mean())
    return cloud_a.select(mask_a), cloud_b.select(mask_b), float(omega)


# ---------------------------------------------------------------------------
# normals and point-to-plane ICP


def estimate_normals(cloud, k: int = 10) -> np.ndarray:
    """Per-point normals from neighborhood PCA, oriented toward the origin.

    Raises NormalEstimationFailure when the cloud is too small or a
    neighborhood is rank-deficient (collinear).
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    n = pts.shape[0]
    if n < k + 1:
        raise NormalEstimationFailure(f"{n} points cannot support {k}-NN normals")
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k + 1)
    neigh = pts[idx]  # (n, k+1, 3)
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    eigvals, eigvecs = np.linalg.eigh(cov)
    if np.any(eigvals[:, 1] <= 1e-9 * np.maximum(eigvals[:, 2], 1e-300)):
        raise NormalEstimationFailure("rank-deficient neighborhood (collinear points)")
    normals = eigvecs[:, :, 0]
    flip = np.einsum("ni,ni->n", normals, pts) > 0.0
    normals[flip] *= -1.0
    return normals


def _correspond(src_world, tree_t, normals, trim_factor):
    dist, idx = tree_t.query(src_world)
    if dist.size == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    cap = trim_factor * np.median(dist)
    keep = dist <= max(cap, 1e-12)
    return np.nonzero(keep)[0], idx[keep]


def registration_error(source, target, pose: Pose, normals=None, trim_factor: float = 3.0):
    """Mean |n . (T p_s - p_t)| over trimmed nearest-neighbor pairs.

    Returns (error, source_indices, target_indices) so callers can re-score
    other transforms on the same correspondence set.
    """
    src = source.points if isinstance(source, PointCloud) else np.asarray(source)
    tgt = target.points if isinstance(target, PointCloud) else np.asarray(target)
    if normals is None:
        normals = estimate_normals(tgt)
    tree_t = cKDTree(tgt)
    src_world = pose.apply(src)
    si, ti = _correspond(src_world, tree_t, normals, trim_factor)
    if si.size == 0:
        raise InsufficientCorrespondences("no correspondences under the trim rule")
    resid = np.einsum("ij,ij->i", normals[ti], src_world[si] - tgt[ti])
    return float(np.mean(np.abs(resid))), si, ti


def icp_point_to_plane(
    source: PointCloud,
    target: PointCloud,
    t_init: Pose,
    params: IcpParams | None = None,
) -> RegistrationResult:
    """Point-to-plane ICP from an initial guess.

    Each iteration matches transformed source points to their nearest
    target points, drops pairs beyond trim_factor times the median match
    distance, solves the linearized 6-DOF update, and applies it on the
    left; stops when the update norm falls below the tolerance.
    """
    params = params or IcpParams()
    src = source.points
    tgt = target.points
    if src.shape[0] < 10 or tgt.shape[0] < 10:
        raise InsufficientCorrespondences(
            f"clouds too small for registration ({src.shape[0]}, {tgt.shape[0]})"
        )
    normals = estimate_normals(target, params.k_normals)
    tree_t = cKDTree(tgt)
    pose = t_init
    converged = False
    iterations = 0
    for iterations in range(1, params.max_iterations + 1):
        src_world = pose.apply(src)
        si, ti = _correspond(src_world, tree_t, normals, params.trim_factor)
        if si.size < params.min_correspondences:
            raise InsufficientCorrespondences(
                f"{si.size} accepted pairs < {params.min_correspondences}"
            )
        p = src_world[si]
        nrm = normals[ti]
        resid = np.einsum("ij,ij->i", nrm, p - tgt[ti])
        jac = np.hstack([np.cross(p, nrm), nrm])  # d resid / d [theta, rho]
        xi, *_ = np.linalg.lstsq(jac, -resid, rcond=None)
        delta = Pose(rotation_exp(xi[:3]), xi[3:])
        pose = delta @ pose
        if np.linalg.norm(xi) < params.tolerance:
            converged = True
            break
    error, _, _ = registration_error(src, tgt, pose, normals, params.trim_factor)
    return RegistrationResult(
        transform=pose,
        error=error,
        iterations=iterations,
        omega=float("nan"),
        converged=converged,
    )


# ---------------------------------------------------------------------------
# refinement pipeline


def _chordal_mean_rotation(rotations):
    ref = rotations[0].q
    acc = np.zeros(4)
    for rot in rotations:
        q = rot.q
        acc += q if q @ ref >= 0.0 else -q
    return Rotation(acc)


def refine_extrinsic(
    frames,
    init: Extrinsics,
    params: RefineParams | None = None,
) -> tuple[Extrinsics, list[FrameOutcome]]:
    """Refine an initial estimate against paired point clouds.

    frames is a sequence of (cloud_a, cloud_b). Ground alignment completes
    the initial t_z first, then each frame is overlap-filtered, gated on
    the overlap factor, and registered with point-to-plane ICP from the
    completed initial transform. The candidate_count lowest-error converged
    results are averaged (chordal quaternion mean, arithmetic translation).
    """
    params = params or RefineParams()
    if not frames:
        raise NoUsableFrames("no frames supplied")
    ground_pairs = [
        (a, b)
        for a, b in frames
        if a.ground is not None and b.ground is not None
        and a.ground.sum() >= 3 and b.ground.sum() >= 3
    ]
    if not ground_pairs:
        raise NoGroundOverlap("no frame carries ground labels on both sides")
    tz = estimate_tz(
        ground_pairs,
        init.transform.rotation,
        inlier_dist=params.ransac_inlier_dist,
        max_iterations=params.ransac_iterations,
        seed=params.seed,
    )
    t0 = Pose(
        init.transform.rotation,
        np.array([init.transform.translation[0], init.transform.translation[1], tz]),
    )
    outcomes = []
    for k, (cloud_a, cloud_b) in enumerate(frames):
        s_a, s_b, omega = overlap_filter(cloud_a, cloud_b, t0, params.overlap_radius)
        if omega <= params.omega_gate:
            outcomes.append(FrameOutcome(k, omega, None, note="below overlap gate"))
            continue
        try:
            result = icp_point_to_plane(s_b, s_a, t0, params.icp)
        except (InsufficientCorrespondences, NormalEstimationFailure) as exc:
            outcomes.append(FrameOutcome(k, omega, None, note=str(exc)))
            continue
        outcomes.append(FrameOutcome(k, omega, replace(result, omega=omega)))
    usable = [o for o in outcomes if o.result is not None and o.result.converged]
    if not usable:
        raise NoUsableFrames("no frame passed the overlap gate and converged")
    usable.sort(key=lambda o: o.result.error)
    chosen = usable[: params.candidate_count]
    chosen_frames = {o.frame for o in chosen}
    outcomes = [
        replace(o, selected=o.frame in chosen_frames) if o.result is not None else o
        for o in outcomes
    ]
    rotation = _chordal_mean_rotation([o.result.transform.rotation for o in chosen])
    translation = np.mean([o.result.transform.translation for o in chosen], axis=0)
    diagnostics = SolverDiagnostics(
        inlier_count=len(chosen),
        total_count=len(frames),
    )
    refined = Extrinsics(
        Pose(rotation, translation),
        tz_observable=True,
        source="refined",
        diagnostics=diagnostics,
    )
    return refined, outcomes

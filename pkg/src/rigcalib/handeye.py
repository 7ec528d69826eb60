"""Motion-based initialization of the sensor-to-sensor extrinsic.

Given synchronized incremental motions (A_k, B_k) of a reference and a
target sensor, the extrinsic X satisfies A_k X = X B_k for every k. Under
planar vehicle motion the reference rotations are pure yaw, so the
pitch-roll part of X decouples: it is the blended null-space solution of a
stacked quaternion linear system, after which yaw and the planar
translation follow from an ordinary least squares. t_z is unobservable
from planar motions and is left at zero by the initializer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateMotion, TooFewInliers
from .geometry import (
    Pose,
    Rotation,
    quat_left_matrix,
    quat_right_matrix,
    rotation_from_xyzw,
    rotation_log,
)

# Relative singular-value thresholds for declaring a motion set degenerate.
# Surfaced in diagnostics; the solvers cannot work below them.
PITCHROLL_RANK_TOL = 1e-6
YAWTRANS_RANK_TOL = 1e-8
KABSCH_RANK_TOL = 1e-8

_MIN_PAIRS = 4


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class MotionPair:
    """Incremental motions of both sensors over one interval [k-1, k].

    rot_residual is |theta_a - theta_b| in radians; trans_residual is
    (r_a . t_a - r_b . t_b)^2 in m^2. Both are cached at construction and
    recomputable via screw_residuals.
    """

    index: int
    motion_a: Pose
    motion_b: Pose
    rot_residual: float
    trans_residual: float
    inlier: bool = True

    @staticmethod
    def from_motions(index: int, motion_a: Pose, motion_b: Pose) -> "MotionPair":
        rot_res, trans_res = _screw_residuals(motion_a, motion_b)
        return MotionPair(index, motion_a, motion_b, rot_res, trans_res)


@dataclass(frozen=True)
class SolverDiagnostics:
    """Observability and filtering evidence attached to an estimate."""

    inlier_count: int
    total_count: int
    policy: str | None = None
    eps_r: float | None = None
    eps_t: float | None = None
    rot_residuals: tuple[float, ...] = ()
    trans_residuals: tuple[float, ...] = ()
    pitchroll_singular_values: tuple[float, ...] = ()
    pitchroll_condition: float | None = None
    pitchroll_blend_residual: float | None = None
    constraint_violation: float | None = None
    yawtrans_singular_values: tuple[float, ...] = ()
    yawtrans_condition: float | None = None
    yawtrans_residual: float | None = None
    axis_singular_values: tuple[float, ...] = ()
    translation_singular_values: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {
            "inlier_count": self.inlier_count,
            "total_count": self.total_count,
            "policy": self.policy,
            "eps_r": self.eps_r,
            "eps_t": self.eps_t,
            "rot_residuals": list(self.rot_residuals),
            "trans_residuals": list(self.trans_residuals),
            "pitchroll_singular_values": list(self.pitchroll_singular_values),
            "pitchroll_condition": self.pitchroll_condition,
            "pitchroll_blend_residual": self.pitchroll_blend_residual,
            "constraint_violation": self.constraint_violation,
            "yawtrans_singular_values": list(self.yawtrans_singular_values),
            "yawtrans_condition": self.yawtrans_condition,
            "yawtrans_residual": self.yawtrans_residual,
            "axis_singular_values": list(self.axis_singular_values),
            "translation_singular_values": list(self.translation_singular_values),
        }

    @staticmethod
    def from_dict(d: dict) -> "SolverDiagnostics":
        return SolverDiagnostics(
            inlier_count=d["inlier_count"],
            total_count=d["total_count"],
            policy=d.get("policy"),
            eps_r=d.get("eps_r"),
            eps_t=d.get("eps_t"),
            rot_residuals=tuple(d.get("rot_residuals", ())),
            trans_residuals=tuple(d.get("trans_residuals", ())),
            pitchroll_singular_values=tuple(d.get("pitchroll_singular_values", ())),
            pitchroll_condition=d.get("pitchroll_condition"),
            pitchroll_blend_residual=d.get("pitchroll_blend_residual"),
            constraint_violation=d.get("constraint_violation"),
            yawtrans_singular_values=tuple(d.get("yawtrans_singular_values", ())),
            yawtrans_condition=d.get("yawtrans_condition"),
            yawtrans_residual=d.get("yawtrans_residual"),
            axis_singular_values=tuple(d.get("axis_singular_values", ())),
            translation_singular_values=tuple(d.get("translation_singular_values", ())),
        )


@dataclass(frozen=True)
class Extrinsics:
    """Estimated sensor-to-sensor transform with observability provenance."""

    transform: Pose
    tz_observable: bool
    source: str  # "init" | "kabsch" | "refined"
    diagnostics: SolverDiagnostics | None = None

    def __post_init__(self):
        if self.source == "init":
            if self.tz_observable or self.transform.translation[2] != 0.0:
                raise ValueError("init estimates must carry t_z = 0, unobservable")


@dataclass(frozen=True)
class FilterStats:
    total: int
    kept: int
    rejected: int
    rejected_rot_exceed: int
    rejected_trans_exceed: int
    policy: str
    eps_r: float
    eps_t: float


@dataclass(frozen=True)
class YawTranslationResult:
    gamma: float
    t_x: float
    t_y: float
    residual: float
    singular_values: tuple[float, ...]


# ---------------------------------------------------------------------------
# screw-motion residuals and outlier filtering


def _screw_residuals(motion_a: Pose, motion_b: Pose) -> tuple[float, float]:
    aa = rotation_log(motion_a.rotation)
    ab = rotation_log(motion_b.rotation)
    rot_res = abs(aa.angle - ab.angle)
    pitch_a = float(aa.axis @ motion_a.translation)
    pitch_b = float(ab.axis @ motion_b.translation)
    return rot_res, (pitch_a - pitch_b) ** 2


def screw_residuals(pair: MotionPair) -> tuple[float, float]:
    """Recompute (|theta_a - theta_b|, (r_a.t_a - r_b.t_b)^2) from the motions."""
    return _screw_residuals(pair.motion_a, pair.motion_b)


def filter_motion_pairs(
    pairs: list[MotionPair],
    eps_r: float,
    eps_t: float,
    policy: str = "both",
) -> tuple[list[MotionPair], FilterStats]:
    """Reject inconsistent pairs by their screw-motion residuals.

    Default policy "both" marks a pair outlier only when rotation AND
    translation residuals exceed their thresholds; "either" rejects on
    one exceedance alone.

    Raises TooFewInliers when fewer than 4 pairs survive.
    """
    if eps_r <= 0 or eps_t <= 0:
        raise ValueError("thresholds must be positive")
    if policy not in ("both", "either"):
        raise ValueError(f"unknown filter policy {policy!r}")
    kept = []
    n_rot = n_trans = 0
    for p in pairs:
        rot_exceed = p.rot_residual > eps_r
        trans_exceed = p.trans_residual > eps_t
        n_rot += rot_exceed
        n_trans += trans_exceed
        if policy == "both":
            outlier = rot_exceed and trans_exceed
        else:
            outlier = rot_exceed or trans_exceed
        if not outlier:
            kept.append(replace(p, inlier=True))
    stats = FilterStats(
        total=len(pairs),
        kept=len(kept),
        rejected=len(pairs) - len(kept),
        rejected_rot_exceed=n_rot,
        rejected_trans_exceed=n_trans,
        policy=policy,
        eps_r=eps_r,
        eps_t=eps_t,
    )
    if len(kept) < _MIN_PAIRS:
        raise TooFewInliers(
            f"{len(kept)} inliers of {len(pairs)} pairs; need >= {_MIN_PAIRS}"
        )
    return kept, stats


# ---------------------------------------------------------------------------
# pitch-roll solve


def _constraint_value(q_xyzw) -> float:
    x, y, z, w = q_xyzw
    return x * y + z * w


def _blend_candidates(u, v):
    """Unit blends cos(p)*u + sin(p)*v satisfying the pitch-roll constraint.

    On the unit circle the constraint is a0 + a1*cos(2p) + b1*sin(2p); when
    it has no zero (possible with noisy nullspace vectors) the minimizing
    blend is returned instead.
    """
    a = u[0] * u[1] + u[2] * u[3]
    b = u[0] * v[1] + v[0] * u[1] + u[2] * v[3] + v[2] * u[3]
    c = v[0] * v[1] + v[2] * v[3]
    if max(abs(a), abs(b), abs(c)) < 1e-12:
        # whole circle satisfies the constraint (rig pitch at +-pi/2)
        return [u, v]
    a0 = 0.5 * (a + c)
    a1 = 0.5 * (a - c)
    b1 = 0.5 * b
    amp = math.hypot(a1, b1)
    psi = math.atan2(b1, a1)
    out = []
    if abs(a0) <= amp:
        delta = math.acos(max(-1.0, min(1.0, -a0 / amp)))
        for two_phi in (psi + delta, psi - delta):
            phi = 0.5 * two_phi
            out.append(math.cos(phi) * u + math.sin(phi) * v)
    else:
        # closest-feasible blend: extremum of the sinusoid nearer to zero
        two_phi = psi + (math.pi if a0 > 0 else 0.0)
        phi = 0.5 * two_phi
        out.append(math.cos(phi) * u + math.sin(phi) * v)
    return out


def solve_pitchroll(pairs: list[MotionPair], weights=None):
    """Solve the pitch-roll rotation from paired incremental rotations.

    Stacks one 4x4 block per pair relating the two rotation quaternions,
    takes the SVD of the 4N x 4 stack, and blends the last two right
    singular vectors so the result satisfies x*y = -z*w with unit norm.

    The constraint admits two blends, a pure pitch-roll rotation and the
    same rotation with 180 degrees of yaw prepended; they are told apart
    by the sign of the (0,0) rotation-matrix entry, which is +cos(pitch)
    on the zero-yaw branch and -cos(pitch) on the other. (The scalar part
    cannot discriminate: it vanishes on both branches when the rig is
    flipped ~180 degrees in pitch or roll.) Remaining ties go to the
    smaller stack residual, then the larger scalar part.

    Returns (q_yx, diagnostics_dict). Raises DegenerateMotion when the
    motions leave the pitch-roll direction unconstrained.
    """
    if len(pairs) < _MIN_PAIRS:
        raise TooFewInliers(f"need >= {_MIN_PAIRS} pairs, got {len(pairs)}")
    blocks = []
    for i, p in enumerate(pairs):
        block = quat_left_matrix(p.motion_a.rotation) - quat_right_matrix(
            p.motion_b.rotation
        )
        if weights is not None:
            block = weights[i] * block
        blocks.append(block)
    q_n = np.vstack(blocks)
    _, s, vt = np.linalg.svd(q_n)
    if s[0] <= 0.0 or s[1] < PITCHROLL_RANK_TOL * s[0]:
        raise DegenerateMotion(
            "motions do not constrain pitch-roll "
            f"(singular values {s.tolist()})"
        )
    candidates = []
    for q_xyzw in _blend_candidates(vt[2], vt[3]):
        rot = rotation_from_xyzw(q_xyzw)
        x, y, z, w = rot.as_xyzw()
        yaw_branch = 1.0 - 2.0 * (y * y + z * z)  # R[0,0]; > 0 on zero-yaw branch
        residual = float(np.linalg.norm(q_n @ rot.as_xyzw()))
        candidates.append((yaw_branch <= 0.0, residual, -w, rot))
    candidates.sort(key=lambda c: c[:3])
    _, residual, _, q_yx = candidates[0]
    diagnostics = {
        "singular_values": s.copy(),
        "blend_residual": residual,
        "constraint_violation": abs(_constraint_value(q_yx.as_xyzw())),
    }
    return q_yx, diagnostics


# ---------------------------------------------------------------------------
# yaw and planar translation solve


def solve_yaw_translation(
    pairs: list[MotionPair], q_yx: Rotation, weights=None
) -> YawTranslationResult:
    """Least-squares yaw angle and (t_x, t_y) with t_z fixed at zero.

    Per pair, two rows relate the unknowns [t_x, t_y, -cos(g), -sin(g)]:
    the upper-left 2x2 of (R_a - I) multiplies the translation, and the
    first two elements of R(q_yx) t_b enter through a 2x2 block so the yaw
    appears only via its cosine and sine. The recovered (cos, sin) is
    renormalized before extracting the angle.
    """
    if len(pairs) < 2:
        raise TooFewInliers(f"need >= 2 pairs, got {len(pairs)}")
    r_yx = q_yx.as_matrix()
    rows = []
    rhs = []
    for i, p in enumerate(pairs):
        r1 = p.motion_a.rotation.as_matrix()[:2, :2] - np.eye(2)
        t1 = (r_yx @ p.motion_b.translation)[:2]
        j = np.array([[t1[0], -t1[1]], [t1[1], t1[0]]])
        g = np.hstack([r1, j])
        b = p.motion_a.translation[:2]
        if weights is not None:
            g = weights[i] * g
            b = weights[i] * b
        rows.append(g)
        rhs.append(b)
    a_mat = np.vstack(rows)
    b_vec = np.concatenate(rhs)
    _, s, vt = np.linalg.svd(a_mat)
    if s[0] <= 0.0 or s[3] < YAWTRANS_RANK_TOL * s[0]:
        raise DegenerateMotion(
            f"motions do not constrain yaw/translation (singular values {s.tolist()})"
        )
    x, *_ = np.linalg.lstsq(a_mat, -b_vec, rcond=None)
    residual = float(np.linalg.norm(a_mat @ x + b_vec)) / math.sqrt(len(b_vec))
    cos_g, sin_g = -x[2], -x[3]
    norm = math.hypot(cos_g, sin_g)
    if norm < 1e-12:
        raise DegenerateMotion("yaw direction vanished in the least squares")
    gamma = math.atan2(sin_g / norm, cos_g / norm)
    return YawTranslationResult(
        gamma=gamma,
        t_x=float(x[0]),
        t_y=float(x[1]),
        residual=residual,
        singular_values=tuple(float(v) for v in s),
    )


# ---------------------------------------------------------------------------
# full initialization


def initialize_extrinsic(
    pairs: list[MotionPair],
    eps_r: float,
    eps_t: float,
    policy: str = "both",
    weighted: bool = False,
) -> Extrinsics:
    """Filter pairs, solve pitch-roll then yaw/translation, compose.

    The optional row weighting (1 / (1 + rot_residual/eps_r)) softens the
    influence of marginal pairs; off by default.
    """
    kept, stats = filter_motion_pairs(pairs, eps_r, eps_t, policy)
    weights = None
    if weighted:
        weights = np.array([1.0 / (1.0 + p.rot_residual / eps_r) for p in kept])
    q_yx, pr_diag = solve_pitchroll(kept, weights)
    yt = solve_yaw_translation(kept, q_yx, weights)
    rotation = Rotation.about_z(yt.gamma) @ q_yx
    pose = Pose(rotation, np.array([yt.t_x, yt.t_y, 0.0]))
    sv = pr_diag["singular_values"]
    diagnostics = SolverDiagnostics(
        inlier_count=stats.kept,
        total_count=stats.total,
        policy=stats.policy,
        eps_r=stats.eps_r,
        eps_t=stats.eps_t,
        rot_residuals=tuple(p.rot_residual for p in pairs),
        trans_residuals=tuple(p.trans_residual for p in pairs),
        pitchroll_singular_values=tuple(float(v) for v in sv),
        pitchroll_condition=float(sv[0] / sv[1]),
        pitchroll_blend_residual=pr_diag["blend_residual"],
        constraint_violation=pr_diag["constraint_violation"],
        yawtrans_singular_values=yt.singular_values,
        yawtrans_condition=yt.singular_values[0] / yt.singular_values[-1],
        yawtrans_residual=yt.residual,
    )
    return Extrinsics(pose, tz_observable=False, source="init", diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# Kabsch baseline


def kabsch_baseline(pairs: list[MotionPair]) -> Extrinsics:
    """Rotation by aligning rotation-axis vectors, translation by least squares.

    The rotation-axis vectors theta*r of both sensors are related by the
    extrinsic rotation; the orthogonal-Procrustes (Kabsch) solution with
    determinant correction aligns them. Planar motions make the axis
    covariance rank-1 and the problem degenerate.
    """
    if len(pairs) < 3:
        raise TooFewInliers(f"need >= 3 pairs, got {len(pairs)}")
    phi_a = np.array([rotation_log(p.motion_a.rotation).phi for p in pairs])
    phi_b = np.array([rotation_log(p.motion_b.rotation).phi for p in pairs])
    h = phi_b.T @ phi_a  # aligns b-axes onto a-axes
    u, s, vt = np.linalg.svd(h)
    if s[0] <= 0.0 or s[1] < KABSCH_RANK_TOL * s[0]:
        raise DegenerateMotion(
            f"axis covariance is rank-deficient (singular values {s.tolist()})"
        )
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    rows = []
    rhs = []
    for p in pairs:
        rows.append(p.motion_a.rotation.as_matrix() - np.eye(3))
        rhs.append(r @ p.motion_b.translation - p.motion_a.translation)
    a_mat = np.vstack(rows)
    b_vec = np.concatenate(rhs)
    t, *_ = np.linalg.lstsq(a_mat, b_vec, rcond=None)
    st = np.linalg.svd(a_mat, compute_uv=False)
    tz_observable = bool(st[-1] > 1e-6 * st[0])
    diagnostics = SolverDiagnostics(
        inlier_count=len(pairs),
        total_count=len(pairs),
        rot_residuals=tuple(p.rot_residual for p in pairs),
        trans_residuals=tuple(p.trans_residual for p in pairs),
        axis_singular_values=tuple(float(v) for v in s),
        translation_singular_values=tuple(float(v) for v in st),
    )
    return Extrinsics(
        Pose(Rotation.from_matrix(r), t),
        tz_observable=tz_observable,
        source="kabsch",
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# joint cost


def evaluate_joint_cost(pairs: list[MotionPair], candidate: Extrinsics):
    """Summed squared residuals of the hand-eye relation at a candidate.

    rotation_cost = sum_k ||R_a R - R R_b||_F^2 and translation_cost is the
    squared norm of the translation identity residual per pair; both vanish
    exactly when A_k X = X B_k holds for all k.
    """
    r = candidate.transform.rotation.as_matrix()
    t = candidate.transform.translation
    eye = np.eye(3)
    rot_cost = 0.0
    trans_cost = 0.0
    for p in pairs:
        ra = p.motion_a.rotation.as_matrix()
        rb = p.motion_b.rotation.as_matrix()
        rot_cost += float(np.sum((ra @ r - r @ rb) ** 2))
        resid = (ra - eye) @ t - (r @ p.motion_b.translation - p.motion_a.translation)
        trans_cost += float(resid @ resid)
    return rot_cost, trans_cost

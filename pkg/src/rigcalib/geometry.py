"""Rotation and rigid-transform algebra.

Quaternions are scalar-first Hamilton (w, x, y, z). Every constructor and
operation renormalizes and enforces the canonical sign w >= 0, so equal
rotations compare bitwise-stably. All types are immutable values; every
function here is pure.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import GimbalDegenerate

# Taylor-series branch for log/exp below this angle (rad); avoids 0/0 where
# tangent-space noise injection operates.
_SMALL_ANGLE = 1e-5
# Below this rotation angle the axis is by-convention (0, 0, 1).
_AXIS_CONVENTION_ANGLE = 1e-9

_UNIT_Z = np.array([0.0, 0.0, 1.0])


def _canonical_sign(q):
    """Flip q so its first nonzero component is positive (w checked first)."""
    for c in q:
        if c > 0.0:
            return q
        if c < 0.0:
            return -q
    raise ValueError("zero quaternion has no canonical sign")


def _quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def _skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


@dataclass(frozen=True)
class Rotation:
    """A 3D rotation stored as a unit quaternion (w, x, y, z)."""

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(4).copy()
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n < 1e-12:
            raise ValueError(f"cannot normalize quaternion {q!r}")
        q /= n
        q = _canonical_sign(q)
        q.flags.writeable = False
        object.__setattr__(self, "q", q)

    # -- constructors --------------------------------------------------

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_rotvec(phi) -> "Rotation":
        return rotation_exp(phi)

    @staticmethod
    def about_x(angle: float) -> "Rotation":
        h = 0.5 * angle
        return Rotation(np.array([math.cos(h), math.sin(h), 0.0, 0.0]))

    @staticmethod
    def about_y(angle: float) -> "Rotation":
        h = 0.5 * angle
        return Rotation(np.array([math.cos(h), 0.0, math.sin(h), 0.0]))

    @staticmethod
    def about_z(angle: float) -> "Rotation":
        h = 0.5 * angle
        return Rotation(np.array([math.cos(h), 0.0, 0.0, math.sin(h)]))

    @staticmethod
    def from_rpy(roll: float, pitch: float, yaw: float) -> "Rotation":
        """Rz(yaw) * Ry(pitch) * Rx(roll)."""
        return Rotation.about_z(yaw) @ Rotation.about_y(pitch) @ Rotation.about_x(roll)

    @staticmethod
    def from_matrix(m) -> "Rotation":
        """Shepperd's method: branch on the largest of trace/diagonal."""
        m = np.asarray(m, dtype=float)
        t = m[0, 0] + m[1, 1] + m[2, 2]
        if t > 0.0:
            s = math.sqrt(t + 1.0) * 2.0
            q = np.array(
                [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s,
                 (m[1, 0] - m[0, 1]) / s]
            )
        elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            q = np.array(
                [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s,
                 (m[0, 2] + m[2, 0]) / s]
            )
        elif m[1, 1] >= m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            q = np.array(
                [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s,
                 (m[1, 2] + m[2, 1]) / s]
            )
        else:
            s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
            q = np.array(
                [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                 (m[1, 2] + m[2, 1]) / s, 0.25 * s]
            )
        return Rotation(q)

    # -- accessors -----------------------------------------------------

    @property
    def w(self) -> float:
        return float(self.q[0])

    @property
    def vec(self) -> np.ndarray:
        return self.q[1:]

    def as_xyzw(self) -> np.ndarray:
        """Vector-first layout used by the 4x4 multiplication matrices."""
        w, x, y, z = self.q
        return np.array([x, y, z, w])

    def as_matrix(self) -> np.ndarray:
        w, x, y, z = self.q
        xx, yy, zz = x * x, y * y, z * z
        wx, wy, wz = w * x, w * y, w * z
        xy, xz, yz = x * y, x * z, y * z
        return np.array(
            [
                [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
                [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
                [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
            ]
        )

    def as_rotvec(self) -> np.ndarray:
        w, x, y, z = self.q  # w >= 0 by canonical sign
        v = np.array([x, y, z])
        s = np.linalg.norm(v)  # sin(theta/2)
        if s < _SMALL_ANGLE:
            t2 = (s / w) ** 2
            k = (2.0 / w) * (1.0 - t2 / 3.0 + t2 * t2 / 5.0)
        else:
            k = 2.0 * math.atan2(s, w) / s
        return k * v

    @property
    def angle(self) -> float:
        """Rotation angle in [0, pi]."""
        w, x, y, z = self.q
        return 2.0 * math.atan2(math.sqrt(x * x + y * y + z * z), w)

    # -- algebra --------------------------------------------------------

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return Rotation(_quat_mul(self.q, other.q))

    def inverse(self) -> "Rotation":
        w, x, y, z = self.q
        return Rotation(np.array([w, -x, -y, -z]))

    def apply(self, points):
        """Rotate one 3-vector or an (N, 3) array of points."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            return self.as_matrix() @ pts
        return pts @ self.as_matrix().T


@dataclass(frozen=True)
class AxisAngle:
    """Unit axis and angle theta in [0, pi]; axis is (0,0,1) when theta ~ 0."""

    axis: np.ndarray
    angle: float

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float).reshape(3).copy()
        if self.angle > _AXIS_CONVENTION_ANGLE:
            n = np.linalg.norm(axis)
            if abs(n - 1.0) > 1e-9:
                raise ValueError(f"axis must be unit length, got norm {n}")
            axis /= n
        axis.flags.writeable = False
        object.__setattr__(self, "axis", axis)

    @property
    def phi(self) -> np.ndarray:
        """Rotation vector theta * axis."""
        return self.angle * self.axis


@dataclass(frozen=True)
class Pose:
    """Rigid transform: p_out = R p_in + t. Composable and invertible."""

    rotation: Rotation
    translation: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float).reshape(3).copy()
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(Rotation.identity(), np.zeros(3))

    @staticmethod
    def from_matrix(m) -> "Pose":
        m = np.asarray(m, dtype=float)
        return Pose(Rotation.from_matrix(m[:3, :3]), m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.as_matrix()
        m[:3, 3] = self.translation
        return m

    def __matmul__(self, other: "Pose") -> "Pose":
        return pose_compose(self, other)

    def inverse(self) -> "Pose":
        return pose_invert(self)

    def apply(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            return self.rotation.apply(pts) + self.translation
        return self.rotation.apply(pts) + self.translation


# ---------------------------------------------------------------------------
# rotation log / exp


def rotation_log(rot: Rotation) -> AxisAngle:
    """Axis-angle of a rotation; total function, theta in [0, pi]."""
    w, x, y, z = rot.q
    v = np.array([x, y, z])
    s = np.linalg.norm(v)
    angle = 2.0 * math.atan2(s, w)
    if angle <= _AXIS_CONVENTION_ANGLE:
        return AxisAngle(_UNIT_Z, angle)
    return AxisAngle(v / s, angle)


def rotation_exp(phi) -> Rotation:
    """Rodrigues exponential of a rotation vector; ||phi|| may exceed pi."""
    phi = np.asarray(phi, dtype=float).reshape(3)
    theta = np.linalg.norm(phi)
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        w = 1.0 - t2 / 8.0 + t2 * t2 / 384.0
        k = 0.5 - t2 / 48.0 + t2 * t2 / 3840.0
    else:
        w = math.cos(0.5 * theta)
        k = math.sin(0.5 * theta) / theta
    return Rotation(np.array([w, k * phi[0], k * phi[1], k * phi[2]]))


def rotation_angle_distance(ra: Rotation, rb: Rotation) -> float:
    """||log(Ra Rb^-1)|| computed in quaternion space.

    2*atan2(||vec||, |w|) of the relative quaternion conditions better than
    acos of the matrix trace near 0 and pi.
    """
    rel = _quat_mul(ra.q, rb.inverse().q)
    return 2.0 * math.atan2(np.linalg.norm(rel[1:]), abs(rel[0]))


# ---------------------------------------------------------------------------
# pose algebra


def pose_compose(a: Pose, b: Pose) -> Pose:
    return Pose(a.rotation @ b.rotation, a.rotation.apply(b.translation) + a.translation)


def pose_invert(a: Pose) -> Pose:
    rinv = a.rotation.inverse()
    return Pose(rinv, -rinv.apply(a.translation))


# ---------------------------------------------------------------------------
# quaternion multiplication matrices (act on vector-first [x, y, z, w])


def quat_left_matrix(rot: Rotation) -> np.ndarray:
    """Q1 such that Q1(a) @ b_xyzw = (a (x) b)_xyzw."""
    w, x, y, z = rot.q
    v = np.array([x, y, z])
    m = np.empty((4, 4))
    m[:3, :3] = w * np.eye(3) + _skew(v)
    m[:3, 3] = v
    m[3, :3] = -v
    m[3, 3] = w
    return m


def quat_right_matrix(rot: Rotation) -> np.ndarray:
    """Q2 such that Q2(b) @ a_xyzw = (a (x) b)_xyzw."""
    w, x, y, z = rot.q
    v = np.array([x, y, z])
    m = np.empty((4, 4))
    m[:3, :3] = w * np.eye(3) - _skew(v)
    m[:3, 3] = v
    m[3, :3] = -v
    m[3, 3] = w
    return m


def rotation_from_xyzw(q_xyzw) -> Rotation:
    x, y, z, w = np.asarray(q_xyzw, dtype=float).reshape(4)
    return Rotation(np.array([w, x, y, z]))


# ---------------------------------------------------------------------------
# yaw (x) pitch-roll factorization


def quat_decompose_yaw_pitchroll(rot: Rotation) -> tuple[Rotation, Rotation]:
    """Split q = q_z (x) q_yx with q_z about the z-axis.

    q_yx = q_y(pitch) (x) q_x(roll) satisfies x*y = -z*w. Near pitch = +-pi/2
    the split is non-unique: a GimbalDegenerate warning is emitted and the
    zero-yaw branch (q_z = identity) is returned.
    """
    m = rot.as_matrix()
    sin_pitch = -m[2, 0]
    cos_pitch = math.hypot(m[0, 0], m[1, 0])
    pitch = math.atan2(sin_pitch, cos_pitch)
    if 0.5 * math.pi - abs(pitch) < 1e-6:
        warnings.warn(
            "pitch within 1e-6 of +-pi/2: yaw/pitch-roll split is non-unique; "
            "using the zero-yaw branch",
            GimbalDegenerate,
            stacklevel=2,
        )
        return Rotation.identity(), rot
    yaw = math.atan2(m[1, 0], m[0, 0])
    q_z = Rotation.about_z(yaw)
    q_yx = q_z.inverse() @ rot
    return q_z, q_yx


# ---------------------------------------------------------------------------
# SE(3) exp / log (tangent layout: [rho, phi] = [translational, rotational])


def _so3_left_jacobian(phi):
    theta = np.linalg.norm(phi)
    k = _skew(phi)
    k2 = k @ k
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        a = 0.5 - t2 / 24.0
        b = 1.0 / 6.0 - t2 / 120.0
    else:
        t2 = theta * theta
        a = (1.0 - math.cos(theta)) / t2
        b = (theta - math.sin(theta)) / (t2 * theta)
    return np.eye(3) + a * k + b * k2


def _so3_left_jacobian_inv(phi):
    theta = np.linalg.norm(phi)
    k = _skew(phi)
    k2 = k @ k
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        c = 1.0 / 12.0 + t2 / 720.0
    else:
        t2 = theta * theta
        c = (1.0 - 0.5 * theta * math.sin(theta) / (1.0 - math.cos(theta))) / t2
    return np.eye(3) - 0.5 * k + c * k2


def se3_exp(xi) -> Pose:
    """Exponential of a 6-vector [rho, phi] onto a rigid transform."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    rho, phi = xi[:3], xi[3:]
    return Pose(rotation_exp(phi), _so3_left_jacobian(phi) @ rho)


def se3_log(pose: Pose) -> np.ndarray:
    """Inverse of se3_exp for rotation angles below pi."""
    phi = pose.rotation.as_rotvec()
    rho = _so3_left_jacobian_inv(phi) @ pose.translation
    return np.concatenate([rho, phi])

"""Unit-quaternion algebra and the tangent-space operators used everywhere else.

Conventions
-----------
* Components are ordered (w, x, y, z); Hamilton product; right-handed frames.
  ``quat_mul(a, b)`` composes rotations with ``b`` applied first, so rotation
  matrices satisfy R(a*b) = R(a) R(b).
* Quaternions produced by construction, normalization, and multiplication are
  canonicalized to the w >= 0 hemisphere. That keeps ``boxminus`` on the short
  geodesic (norm <= pi) with no sign fix-up inside the log map.
* ``quat_exp`` is the one exception: it returns the principal exponential
  without a hemisphere flip, so ``quat_log(quat_exp(d)) == d`` holds for any
  ``norm(d) < pi``.
* Tangent vectors are plain float ndarrays of shape (3,), in radians. The
  ``*_arr`` helpers are vectorized equivalents operating on (N, 4) / (N, 3)
  arrays; they implement the same formulas and are cross-checked in the tests.

All values are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

# Below this, sinc/log ratios switch to their series expansions to avoid 0/0.
_SMALL = 1e-8


class UnitQuaternion(NamedTuple):
    """Orientation on the unit-quaternion manifold, components (w, x, y, z)."""

    w: float
    x: float
    y: float
    z: float

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_wxyz(cls, q, canonical: bool = True) -> "UnitQuaternion":
        """Build from any length-4 sequence, normalizing (and flipping to w>=0)."""
        w, x, y, z = (float(v) for v in q)
        return cls(w, x, y, z).normalized(canonical=canonical)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "UnitQuaternion":
        ax = np.asarray(axis, dtype=float)
        n = math.sqrt(float(ax @ ax))
        if n == 0.0:
            return cls.identity()
        return cls.from_wxyz(quat_exp(ax * (float(angle) / n / 2.0)))

    def normalized(self, canonical: bool = True) -> "UnitQuaternion":
        w, x, y, z = self
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if n == 0.0 or not math.isfinite(n):
            raise ValueError("cannot normalize zero/non-finite quaternion")
        inv = 1.0 / n
        if canonical and w < 0.0:
            inv = -inv
        return UnitQuaternion(w * inv, x * inv, y * inv, z * inv)

    def conjugate(self) -> "UnitQuaternion":
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    inverse = conjugate  # unit norm, so the inverse is the conjugate

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)

    def rotation_matrix(self) -> np.ndarray:
        """3x3 matrix R with R @ u == rotate_vector(self, u)."""
        w, x, y, z = self
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )


def quat_mul(a: UnitQuaternion, b: UnitQuaternion) -> UnitQuaternion:
    """Hamilton product a*b (b applied first), renormalized and canonicalized."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return UnitQuaternion(
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ).normalized()


def quat_exp(delta) -> UnitQuaternion:
    """Exponential map: [cos(|d|); sinc(|d|) d]. No hemisphere flip (see module doc)."""
    d = np.asarray(delta, dtype=float)
    if d.shape != (3,):
        raise ValueError(f"tangent vector must have shape (3,), got {d.shape}")
    if not np.all(np.isfinite(d)):
        raise ValueError("non-finite tangent vector")
    theta = math.sqrt(float(d @ d))
    if theta < _SMALL:
        s = 1.0 - theta * theta / 6.0
    else:
        s = math.sin(theta) / theta
    q = UnitQuaternion(math.cos(theta), s * d[0], s * d[1], s * d[2])
    return q.normalized(canonical=False)


def quat_log(q: UnitQuaternion) -> np.ndarray:
    """Log map: atan2(|v|, w)/|v| * v, the inverse of quat_exp on |d| < pi."""
    w, x, y, z = q
    v = np.array([x, y, z])
    s = math.sqrt(x * x + y * y + z * z)
    if s < _SMALL:
        if w < 0.0:
            # At/near -identity the rotation is (close to) null; treat as such.
            w, v = -w, -v
        factor = (1.0 - s * s / (3.0 * w * w)) / w
    else:
        factor = math.atan2(s, w) / s
    return factor * v


def boxplus(q: UnitQuaternion, delta) -> UnitQuaternion:
    """Manifold displacement: q * exp(delta/2)."""
    d = np.asarray(delta, dtype=float)
    return quat_mul(q, quat_exp(d / 2.0))


def boxminus(q1: UnitQuaternion, q2: UnitQuaternion) -> np.ndarray:
    """Manifold difference 2*log(q2^-1 * q1); shortest geodesic, norm <= pi."""
    return 2.0 * quat_log(quat_mul(q2.conjugate(), q1))


def rotate_vector(q: UnitQuaternion, u) -> np.ndarray:
    """Rotate a 3-vector by q (device->world for a world-from-device quaternion)."""
    w = q.w
    v = np.array([q.x, q.y, q.z])
    u = np.asarray(u, dtype=float)
    t = 2.0 * np.cross(v, u)
    return u + w * t + np.cross(v, t)


def angular_distance(q1: UnitQuaternion, q2: UnitQuaternion) -> float:
    """Geodesic angle between two orientations, in [0, pi] radians."""
    d = boxminus(q1, q2)
    return math.sqrt(float(d @ d))


# ---------------------------------------------------------------------------
# Vectorized variants on (N, 4) / (N, 3) arrays. Same conventions as above.
# ---------------------------------------------------------------------------


def normalize_arr(q: np.ndarray, canonical: bool = True) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    out = q / n
    if canonical:
        flip = out[..., 0:1] < 0.0
        out = np.where(flip, -out, out)
    return out


def quat_mul_arr(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = (a[..., i] for i in range(4))
    bw, bx, by, bz = (b[..., i] for i in range(4))
    out = np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )
    return normalize_arr(out)


def conjugate_arr(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_exp_arr(delta: np.ndarray) -> np.ndarray:
    d = np.asarray(delta, dtype=float)
    theta = np.linalg.norm(d, axis=-1, keepdims=True)
    small = theta < _SMALL
    safe = np.where(small, 1.0, theta)
    s = np.where(small, 1.0 - theta * theta / 6.0, np.sin(safe) / safe)
    return np.concatenate([np.cos(theta), s * d], axis=-1)


def quat_log_arr(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    w = q[..., 0:1]
    v = q[..., 1:4]
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    small = (s < _SMALL)[..., 0]
    neg = small & (w[..., 0] < 0.0)
    w = np.where(neg[..., None], -w, w)
    v = np.where(neg[..., None], -v, v)
    s_safe = np.where(small[..., None], 1.0, s)
    w_safe = np.where(w == 0.0, 1.0, w)
    factor = np.where(
        small[..., None],
        (1.0 - s * s / (3.0 * w_safe * w_safe)) / w_safe,
        np.arctan2(s, w) / s_safe,
    )
    return factor * v


def boxplus_arr(q: np.ndarray, delta: np.ndarray) -> np.ndarray:
    return quat_mul_arr(q, quat_exp_arr(np.asarray(delta, dtype=float) / 2.0))


def boxminus_arr(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    return 2.0 * quat_log_arr(quat_mul_arr(conjugate_arr(q2), q1))


def angular_distance_arr(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    return np.linalg.norm(boxminus_arr(q1, q2), axis=-1)


def rotation_matrices(q: np.ndarray) -> np.ndarray:
    """(N, 4) quaternions -> (N, 3, 3) rotation matrices."""
    q = normalize_arr(q, canonical=False)
    w, x, y, z = (q[..., i] for i in range(4))
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def rotate_vectors_arr(q: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Rotate (N, 3) vectors by (N, 4) quaternions."""
    q = np.asarray(q, dtype=float)
    u = np.asarray(u, dtype=float)
    w = q[..., 0:1]
    v = q[..., 1:4]
    t = 2.0 * np.cross(v, u)
    return u + w * t + np.cross(v, t)


def yaw_arr(q: np.ndarray) -> np.ndarray:
    """Heading (rotation about world z) of each quaternion, ZYX convention."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = (q[..., i] for i in range(4))
    return np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))


def from_euler_zyx(yaw, pitch, roll) -> np.ndarray:
    """Compose (N,) Euler angle arrays into (N, 4) quaternions (yaw about z first)."""
    yaw = np.asarray(yaw, dtype=float)
    cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
    cp, sp = np.cos(np.asarray(pitch, dtype=float) / 2), np.sin(np.asarray(pitch, dtype=float) / 2)
    cr, sr = np.cos(np.asarray(roll, dtype=float) / 2), np.sin(np.asarray(roll, dtype=float) / 2)
    return normalize_arr(
        np.stack(
            [
                cy * cp * cr + sy * sp * sr,
                cy * cp * sr - sy * sp * cr,
                cy * sp * cr + sy * cp * sr,
                sy * cp * cr - cy * sp * sr,
            ],
            axis=-1,
        )
    )

"""Rotation algebra: quaternions, rotation matrices and axis-angle.

Conventions used everywhere in the package:

* Quaternions are numpy arrays with the scalar part first, ``(w, x, y, z)``,
  and Hamilton multiplication (``i * j = k``). All functions broadcast over
  leading dimensions, so ``(..., 4)`` batches work unchanged.
* ``quat_mul(a, b)`` applies ``b`` first, then ``a``:
  ``quat_rotate_vec(quat_mul(a, b), v) == quat_rotate_vec(a, quat_rotate_vec(b, v))``.
* Quaternions returned by the public constructors are unit length and lie in
  the canonical hemisphere: ``w >= 0``, and when ``w == 0`` the first nonzero
  of ``(x, y, z)`` is positive.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVectorError, RotationError

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

#: Vectors shorter than this (mm) have no usable direction.
EPS_LENGTH = 1e-9


@dataclass(frozen=True)
class AxisAngle:
    """Rotation by ``angle`` radians (in ``[0, pi]``) about unit ``axis``."""

    axis: np.ndarray
    angle: float

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        norm = np.linalg.norm(axis)
        if norm <= EPS_LENGTH:
            raise DegenerateVectorError("axis-angle axis has zero length")
        angle = float(self.angle)
        if angle < 0.0:
            axis, angle = -axis, -angle
        angle = np.fmod(angle, 2.0 * np.pi)
        if angle > np.pi:
            axis, angle = -axis, 2.0 * np.pi - angle
        object.__setattr__(self, "axis", axis / norm)
        object.__setattr__(self, "angle", float(angle))


def canonicalize(q):
    """Flip sign so that ``q`` lies in the canonical hemisphere."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    lead = np.where(w != 0, w, np.where(x != 0, x, np.where(y != 0, y, z)))
    sign = np.where(lead < 0, -1.0, 1.0)
    return q * sign[..., None]


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm <= 0.0):
        raise DegenerateVectorError("cannot normalize a zero quaternion")
    return canonicalize(q / norm)


def _hamilton(a, b):
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_mul(a, b):
    """Hamilton product ``a * b``, renormalized and canonicalized."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return quat_normalize(_hamilton(a, b))


def quat_conj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_inv(q):
    """Inverse of a unit quaternion (its conjugate), canonicalized."""
    return canonicalize(quat_conj(q))


def quat_rotate_vec(q, v):
    """Rotate 3-vector(s) ``v`` by unit quaternion(s) ``q``."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., :1]
    u = q[..., 1:]
    # v' = v + 2w (u x v) + 2 u x (u x v)
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_to_matrix(q):
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
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


def is_rotation_matrix(m, tol=1e-6):
    m = np.asarray(m, dtype=float)
    eye = np.eye(3)
    ortho = np.abs(m @ np.swapaxes(m, -1, -2) - eye).max(axis=(-2, -1)) <= tol
    proper = np.abs(np.linalg.det(m) - 1.0) <= tol
    return ortho & proper


def matrix_to_quat(m):
    """Convert proper rotation matrices to canonical quaternions.

    Uses the largest-pivot branch (trace, or one of the diagonal entries) so
    that 180 degree rotations, where the trace is -1, stay accurate.
    """
    m = np.asarray(m, dtype=float)
    if m.shape[-2:] != (3, 3):
        raise RotationError(f"expected (..., 3, 3) matrices, got {m.shape}")
    if not np.all(is_rotation_matrix(m)):
        raise RotationError("matrix is not orthonormal with det +1 (tolerance 1e-6)")
    m00, m11, m22 = m[..., 0, 0], m[..., 1, 1], m[..., 2, 2]
    trace = m00 + m11 + m22
    pivots = np.stack([trace, m00, m11, m22], axis=-1)
    branch = np.argmax(pivots, axis=-1)

    q = np.empty(m.shape[:-2] + (4,))
    with np.errstate(invalid="ignore", divide="ignore"):
        # branch 0: w is largest
        s = np.sqrt(np.maximum(trace + 1.0, 0.0)) * 2.0
        c0 = np.stack([0.25 * s,
                       (m[..., 2, 1] - m[..., 1, 2]) / s,
                       (m[..., 0, 2] - m[..., 2, 0]) / s,
                       (m[..., 1, 0] - m[..., 0, 1]) / s], axis=-1)
        s = np.sqrt(np.maximum(1.0 + m00 - m11 - m22, 0.0)) * 2.0
        c1 = np.stack([(m[..., 2, 1] - m[..., 1, 2]) / s,
                       0.25 * s,
                       (m[..., 0, 1] + m[..., 1, 0]) / s,
                       (m[..., 0, 2] + m[..., 2, 0]) / s], axis=-1)
        s = np.sqrt(np.maximum(1.0 + m11 - m00 - m22, 0.0)) * 2.0
        c2 = np.stack([(m[..., 0, 2] - m[..., 2, 0]) / s,
                       (m[..., 0, 1] + m[..., 1, 0]) / s,
                       0.25 * s,
                       (m[..., 1, 2] + m[..., 2, 1]) / s], axis=-1)
        s = np.sqrt(np.maximum(1.0 + m22 - m00 - m11, 0.0)) * 2.0
        c3 = np.stack([(m[..., 1, 0] - m[..., 0, 1]) / s,
                       (m[..., 0, 2] + m[..., 2, 0]) / s,
                       (m[..., 1, 2] + m[..., 2, 1]) / s,
                       0.25 * s], axis=-1)
    for i, cand in enumerate((c0, c1, c2, c3)):
        q = np.where((branch == i)[..., None], cand, q)
    return quat_normalize(q)


def axis_angle_to_quat(aa):
    """Quaternion for an :class:`AxisAngle` (or an ``(axis, angle)`` pair)."""
    if isinstance(aa, AxisAngle):
        axis, angle = aa.axis, aa.angle
    else:
        axis, angle = aa
    axis = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * angle[..., None]
    return quat_normalize(np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1))


def rotvec_to_quat(r):
    """Quaternion from rotation vector(s) ``angle * axis``; zero maps to identity."""
    r = np.asarray(r, dtype=float)
    angle = np.linalg.norm(r, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(a/2)/a -> 1/2 as a -> 0
    scale = np.where(angle > 1e-12, np.sin(half) / np.where(angle > 0, angle, 1.0), 0.5 - angle ** 2 / 48.0)
    return quat_normalize(np.concatenate([np.cos(half), scale * r], axis=-1))


def quat_to_rotvec(q):
    q = canonicalize(np.asarray(q, dtype=float))
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, q[..., :1])
    scale = np.where(s > 1e-12, angle / np.where(s > 0, s, 1.0), 2.0)
    return scale * v


def quat_to_axis_angle(q):
    q = canonicalize(np.asarray(q, dtype=float))
    v = q[1:]
    s = np.linalg.norm(v)
    if s < 1e-15:
        return AxisAngle(np.array([0.0, 0.0, 1.0]), 0.0)
    return AxisAngle(v / s, 2.0 * np.arctan2(s, q[0]))


def skew(v):
    v = np.asarray(v, dtype=float)
    k = np.zeros(v.shape[:-1] + (3, 3))
    k[..., 0, 1] = -v[..., 2]
    k[..., 0, 2] = v[..., 1]
    k[..., 1, 0] = v[..., 2]
    k[..., 1, 2] = -v[..., 0]
    k[..., 2, 0] = -v[..., 1]
    k[..., 2, 1] = v[..., 0]
    return k


def rodrigues(aa):
    """Rotation matrix ``I + sin(t) K + (1 - cos(t)) K^2`` for an axis-angle."""
    if isinstance(aa, AxisAngle):
        axis, angle = aa.axis, aa.angle
    else:
        axis, angle = aa
    axis = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)[..., None, None]
    k = skew(axis / np.linalg.norm(axis, axis=-1, keepdims=True))
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def angle_between(u, v):
    """Angle in ``[0, pi]`` between vectors, via ``atan2(|u x v|, u . v)``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(np.linalg.norm(u, axis=-1) <= EPS_LENGTH) or np.any(np.linalg.norm(v, axis=-1) <= EPS_LENGTH):
        raise DegenerateVectorError("angle_between needs vectors longer than 1e-9")
    cross = np.linalg.norm(np.cross(u, v), axis=-1)
    return np.arctan2(cross, np.sum(u * v, axis=-1))


def random_quaternions(rng, n=None):
    """Uniformly distributed canonical unit quaternions."""
    shape = (4,) if n is None else (n, 4)
    q = rng.standard_normal(shape)
    return quat_normalize(q)

"""Parameter-free forward and inverse kinematics layers.

Forward kinematics accumulates one global rotation per joint, top-down::

    G_root = identity
    G_j    = G_pa(j) * A_j * q_j          A_j = q^g_pa(j) * (q^g_j)^-1
    p_j    = p_pa(j) + G_j . b_j^j

Expanding ``G_j`` gives the full per-bone product (rest term, pose rotation,
rest term, pose rotation, ... , rest term, ``q_j``) applied to the local rest
bone ``b_j^j``. With identity pose rotations the product telescopes to
``(q^g_j)^-1`` and FK returns the rest pose, for any choice of rest frames.

Inverse kinematics walks the same order: the total rotation ``G_j`` of each
bone is taken from :func:`canonical_solve` (rest bone onto observed bone) or
from an override, and the ancestors' rotations are stripped off to leave the
local ``q_j``.

:func:`fk_override_batch` is FK in which selected bones take a given total
rotation instead of the chained product (KineFuse's substitution, in
forward form). :func:`override_to_local` converts such a pose back to local
parameters, so ``fk(override_to_local(...))`` gives the same positions.

Quaternion parameters are used in the ambient 4-space; FK normalises each
one, so gradients returned by :func:`fk_backward` already include the
normalisation.
"""
from dataclasses import dataclass

import numpy as np

from . import _accel
from . import _kernels as K
from . import quatkin as qk
from .errors import DegenerateVectorError, ShapeError


@dataclass
class PoseParams:
    """Root translation plus one quaternion per joint.

    ``rotations`` has shape ``(..., J, 4)``; the root row is ignored by FK
    and set to identity by IK.
    """

    root_translation: np.ndarray
    rotations: np.ndarray

    def __post_init__(self):
        self.root_translation = np.asarray(self.root_translation, dtype=float)
        self.rotations = np.asarray(self.rotations, dtype=float)

    @property
    def batched(self):
        return self.rotations.ndim == 3


@dataclass
class FkGradients:
    """Dense FK Jacobians for one frame.

    ``d_translation[j, a, b]`` = d p_j[a] / d T[b];
    ``d_rotations[j, a, i, c]`` = d p_j[a] / d q_{nonroot[i]}[c].
    """

    d_translation: np.ndarray
    d_rotations: np.ndarray


def _kernels(backend=None):
    use_numba = _accel.USE_NUMBA if backend is None else backend == "numba"
    if use_numba and not _accel.HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    if use_numba:
        return K.fk_nb, K.fk_backward_nb, K.ik_nb
    return K.fk_np, K.fk_backward_np, K.ik_np


def _override_kernels(backend=None):
    use_numba = _accel.USE_NUMBA if backend is None else backend == "numba"
    if use_numba and not _accel.HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    if use_numba:
        return K.fk_override_nb, K.fk_override_backward_nb
    return K.fk_override_np, K.fk_override_backward_np


def _tree_arrays(rest, tree):
    return (tree.parents_array(), tree.order_array(),
            np.ascontiguousarray(rest.fk_offsets), np.ascontiguousarray(rest.bones_local))


def _check_rotations(q, tree):
    if q.ndim != 3 or q.shape[1:] != (tree.joint_count, 4):
        raise ShapeError(f"rotations must be (N, {tree.joint_count}, 4), got {q.shape}")


def fk_batch(T, q, rest, tree, backend=None, return_global=False):
    """FK for ``N`` frames: ``T`` (N, 3), ``q`` (N, J, 4) -> positions (N, J, 3)."""
    T = np.ascontiguousarray(T, dtype=float)
    q = np.ascontiguousarray(q, dtype=float)
    _check_rotations(q, tree)
    if T.shape != (q.shape[0], 3):
        raise ShapeError(f"root translation must be ({q.shape[0]}, 3), got {T.shape}")
    fk_kernel, _, _ = _kernels(backend)
    pos, G = fk_kernel(T, q, *_tree_arrays(rest, tree))
    return (pos, G) if return_global else pos


def fk(params, rest, tree, backend=None):
    """Joint positions for :class:`PoseParams` (single frame or batch)."""
    if params.batched:
        return fk_batch(params.root_translation, params.rotations, rest, tree, backend)
    pos = fk_batch(params.root_translation[None], params.rotations[None], rest, tree, backend)
    return pos[0]


def fk_global_rotations(params, rest, tree, backend=None):
    """Accumulated global rotation ``G_j`` of every joint's bone."""
    T = np.atleast_2d(params.root_translation)
    q = params.rotations if params.batched else params.rotations[None]
    _, G = fk_batch(T, q, rest, tree, backend, return_global=True)
    return G if params.batched else G[0]


def fk_backward_batch(T, q, upstream, rest, tree, backend=None):
    """Vector-Jacobian product of FK: returns ``(dT (N, 3), dq (N, J, 4))``."""
    T = np.ascontiguousarray(T, dtype=float)
    q = np.ascontiguousarray(q, dtype=float)
    upstream = np.ascontiguousarray(upstream, dtype=float)
    _check_rotations(q, tree)
    if upstream.shape != q.shape[:2] + (3,):
        raise ShapeError(f"upstream gradient must be {q.shape[:2] + (3,)}, got {upstream.shape}")
    _, bwd_kernel, _ = _kernels(backend)
    return bwd_kernel(T, q, *_tree_arrays(rest, tree), upstream)


def fk_backward(params, rest, tree, upstream, backend=None):
    """Gradient of ``sum(upstream * fk(params))`` w.r.t. translation and raw quaternions."""
    if params.batched:
        return fk_backward_batch(params.root_translation, params.rotations, upstream, rest, tree, backend)
    dT, dq = fk_backward_batch(params.root_translation[None], params.rotations[None],
                               np.asarray(upstream)[None], rest, tree, backend)
    return dT[0], dq[0]


def fk_jacobian(params, rest, tree, backend=None):
    """Dense :class:`FkGradients` for a single frame, one VJP per output coordinate."""
    J = tree.joint_count
    nonroot = list(tree.nonroot)
    basis = np.zeros((J * 3, J, 3))
    basis[np.arange(J * 3), np.repeat(np.arange(J), 3), np.tile(np.arange(3), J)] = 1.0
    T = np.repeat(params.root_translation[None], J * 3, axis=0)
    q = np.repeat(params.rotations[None], J * 3, axis=0)
    dT, dq = fk_backward_batch(T, q, basis, rest, tree, backend)
    return FkGradients(dT.reshape(J, 3, 3), dq[:, nonroot].reshape(J, 3, len(nonroot), 4))


def _override_args(T, q, G_override, mask, tree):
    T = np.ascontiguousarray(T, dtype=float)
    q = np.ascontiguousarray(q, dtype=float)
    _check_rotations(q, tree)
    G_override = np.ascontiguousarray(G_override, dtype=float)
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    if G_override.shape != q.shape or mask.shape != q.shape[:2]:
        raise ShapeError(f"override must be {q.shape} with mask {q.shape[:2]}, "
                         f"got {G_override.shape} and {mask.shape}")
    if np.any(mask[:, tree.root]):
        raise ShapeError("the root bone cannot be overridden")
    return T, q, G_override, mask


def fk_override_batch(T, q, G_override, mask, rest, tree, backend=None, return_global=False):
    """FK where bone ``j`` of frame ``f`` takes total rotation ``G_override[f, j]`` if ``mask[f, j]``.

    Overridden quaternions are normalised; unmasked rows of ``G_override``
    are ignored. With an all-false mask this is :func:`fk_batch`.
    """
    T, q, G_override, mask = _override_args(T, q, G_override, mask, tree)
    fwd, _ = _override_kernels(backend)
    pos, G = fwd(T, q, *_tree_arrays(rest, tree), G_override, mask)
    return (pos, G) if return_global else pos


def fk_override_backward_batch(T, q, G_override, mask, upstream, rest, tree, backend=None):
    """Gradient of ``sum(upstream * fk_override_batch(...))`` w.r.t. raw ``G_override`` (zero where unmasked)."""
    T, q, G_override, mask = _override_args(T, q, G_override, mask, tree)
    upstream = np.ascontiguousarray(upstream, dtype=float)
    if upstream.shape != q.shape[:2] + (3,):
        raise ShapeError(f"upstream gradient must be {q.shape[:2] + (3,)}, got {upstream.shape}")
    _, bwd = _override_kernels(backend)
    return bwd(T, q, *_tree_arrays(rest, tree), G_override, mask, upstream)


def override_to_local(q, G_override, mask, rest, tree):
    """Local parameters (unit, canonical) reproducing :func:`fk_override_batch` under plain FK."""
    q = np.asarray(q, dtype=float)
    T = np.zeros((q.shape[0], 3))
    _, q, G_override, mask = _override_args(T, q, G_override, mask, tree)
    _, G = fk_override_batch(T, q, G_override, mask, rest, tree, return_global=True)
    out = qk.quat_normalize(q)
    for j in tree.nonroot:
        rows = mask[:, j]
        if not rows.any():
            continue
        pre = qk.quat_mul(G[rows, tree.parents[j]], rest.fk_offsets[j])
        out[rows, j] = qk.quat_mul(qk.quat_inv(pre), G[rows, j])
    out[:, tree.root] = qk.IDENTITY
    return out


def canonical_solve(b_ref, b_cur):
    """Axis-angle rotating the direction of ``b_ref`` onto that of ``b_cur``.

    The axis is ``normalize(b_ref x b_cur)`` and the angle is the angle between
    the vectors. Parallel inputs give angle 0 about ``(0, 0, 1)``; antiparallel
    inputs give a half turn about the rejection, from ``b_ref``, of the basis
    vector matching ``b_ref``'s smallest component.
    """
    u = np.asarray(b_ref, dtype=float)
    v = np.asarray(b_cur, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu <= qk.EPS_LENGTH or nv <= qk.EPS_LENGTH:
        raise DegenerateVectorError("canonical_solve needs nonzero bone vectors")
    cross = np.cross(u, v)
    c = np.linalg.norm(cross)
    if c < K.PARALLEL_TOL * nu * nv:
        if u @ v > 0:
            return qk.AxisAngle(np.array([0.0, 0.0, 1.0]), 0.0)
        q = K._np_canonical_solve(u, v[None])[0]
        return qk.AxisAngle(q[1:], np.pi)
    return qk.AxisAngle(cross / c, float(qk.angle_between(u, v)))


def ik_batch(pos, rest, tree, override=None, mask=None, backend=None):
    """Canonical IK for ``N`` frames of positions ``(N, J, 3)``.

    ``override`` (N, J, 4) and boolean ``mask`` (N, J) replace the canonical
    total rotation of selected bones. Returns ``(T (N, 3), q (N, J, 4))``.
    """
    pos = np.ascontiguousarray(pos, dtype=float)
    N, J = pos.shape[:2]
    if pos.shape != (N, tree.joint_count, 3):
        raise ShapeError(f"positions must be (N, {tree.joint_count}, 3), got {pos.shape}")
    if override is None:
        override = np.zeros((N, J, 4))
        mask = np.zeros((N, J), dtype=np.bool_)
    override = np.ascontiguousarray(override, dtype=float)
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    _, _, ik_kernel = _kernels(backend)
    T, q, status = ik_kernel(pos, *_tree_arrays(rest, tree), override, mask)
    if status >= 0:
        frame, joint = divmod(int(status), J)
        raise DegenerateVectorError(
            f"zero-length bone ending at {tree.names[joint]!r} in frame {frame}")
    return T, q


def ik(pose, rest, tree, backend=None):
    """:class:`PoseParams` whose FK reproduces ``pose`` up to bone-length changes."""
    pose = np.asarray(pose, dtype=float)
    if pose.ndim == 3:
        return PoseParams(*ik_batch(pose, rest, tree, backend=backend))
    T, q = ik_batch(pose[None], rest, tree, backend=backend)
    return PoseParams(T[0], q[0])


def identity_params(rest, tree, n=None):
    q = np.zeros((tree.joint_count, 4))
    q[:, 0] = 1.0
    T = rest.positions[tree.root].copy()
    if n is None:
        return PoseParams(T, q)
    return PoseParams(np.repeat(T[None], n, axis=0), np.repeat(q[None], n, axis=0))

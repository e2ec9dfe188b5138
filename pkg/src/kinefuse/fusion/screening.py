"""Threshold-screened fusion: NaiveFuse (bone vectors) and KineFuse (IK/FK)."""
import numpy as np

from .. import kinelayers as kl
from .. import quatkin as qk
from ..errors import DegenerateVectorError

SCREEN_AGAINST = ("vision", "rest")


def _as_batch(pose):
    pose = np.asarray(pose, dtype=float)
    return (pose[None], True) if pose.ndim == 2 else (pose, False)


def screen(aligned, vis_pose, rest, tree, theta_t, against="vision"):
    """Boolean (N, K) mask of sensors whose bone disagrees with vision by more than ``theta_t``.

    ``against="vision"`` measures the angle between the IMU bone and the
    observed vision bone; ``against="rest"`` measures it against the local
    rest bone instead.
    """
    if against not in SCREEN_AGAINST:
        raise ValueError(f"screen_against must be one of {SCREEN_AGAINST}")
    joints = list(aligned.joints)
    parents = [tree.parents[j] for j in joints]
    if against == "vision":
        ref = vis_pose[:, joints] - vis_pose[:, parents]
    else:
        ref = np.broadcast_to(rest.bones_local[joints], aligned.bones.shape)
    if np.any(np.linalg.norm(ref, axis=-1) <= qk.EPS_LENGTH):
        raise DegenerateVectorError("zero-length vision bone on a sensor-carrying limb")
    if np.isinf(theta_t) and theta_t > 0:
        return np.zeros(ref.shape[:-1], dtype=bool)
    return qk.angle_between(aligned.bones, ref) > theta_t


def naive_fuse(vis_pose, aligned, tree, rest, theta_t, screen_against="vision", return_replaced=False):
    """Replace screened vision bones by IMU bone vectors and rebuild positions top-down.

    Joints whose path to the root crosses no replaced bone are copied from the
    input unchanged; the others are rebuilt as ``p_pa + b`` with ``b`` either the
    IMU bone or the original vision bone.
    """
    pose, single = _as_batch(vis_pose)
    if aligned.bones.ndim == 2:
        aligned = aligned.frames(np.newaxis)
    replaced = screen(aligned, pose, rest, tree, theta_t, screen_against)
    col = {j: c for c, j in enumerate(aligned.joints)}

    out = pose.copy()
    dirty = np.zeros(pose.shape[:2], dtype=bool)
    for j in tree.order:
        p = tree.parents[j]
        if p < 0:
            continue
        bone = pose[:, j] - pose[:, p]
        swap = np.zeros(pose.shape[0], dtype=bool)
        if j in col:
            swap = replaced[:, col[j]]
            bone = np.where(swap[:, None], aligned.bones[:, col[j]], bone)
        dirty[:, j] = dirty[:, p] | swap
        out[:, j] = np.where(dirty[:, j, None], out[:, p] + bone, pose[:, j])
    out = out[0] if single else out
    if return_replaced:
        return out, (replaced[0] if single else replaced)
    return out


def kine_fuse(vis_pose, aligned, rest, tree, theta_t, screen_against="vision", return_replaced=False,
              backend=None):
    """Kinematic fusion: canonical IK on vision with screened IMU overrides, then FK.

    Returns ``(PoseParams, positions)``; with ``theta_t = inf`` this is exactly
    ``fk(ik(vis_pose))``.
    """
    pose, single = _as_batch(vis_pose)
    if aligned.bones.ndim == 2:
        aligned = aligned.frames(np.newaxis)
    N, J = pose.shape[:2]
    replaced = screen(aligned, pose, rest, tree, theta_t, screen_against)
    override = np.zeros((N, J, 4))
    mask = np.zeros((N, J), dtype=bool)
    for c, j in enumerate(aligned.joints):
        override[:, j] = aligned.q_local[:, c]
        mask[:, j] = replaced[:, c]
    T, q = kl.ik_batch(pose, rest, tree, override, mask, backend=backend)
    fused = kl.fk_batch(T, q, rest, tree, backend=backend)
    params = kl.PoseParams(T[0], q[0]) if single else kl.PoseParams(T, q)
    fused = fused[0] if single else fused
    if return_replaced:
        return params, fused, (replaced[0] if single else replaced)
    return params, fused

"""Seeded self-check suites shared by the CLI and the acceptance tests.

Every suite returns a plain dict of measured errors, thresholds and a
``passed`` flag, so the same numbers can be printed, written as JSON or
asserted on.
"""
import time

import numpy as np

from . import kinelayers as kl
from . import quatkin as qk
from . import skeleton as sk
from .fusion import ada
from .fusion import kine_fuse
from .synth import NoiseConfig, generate_sequence, true_imu_rotations

ROUNDTRIP_TOL_MM = 1e-6
REST_TOL_MM = 1e-9
LENGTH_TOL_REL = 1e-9
FK_GRAD_TOL = 1e-5
LOSS_GRAD_TOL = 1e-4
ROTATION_TOL = 1e-12
CONVERSION_TOL = 1e-10
ORACLE_TOL = 1e-9


def random_params(rng, tree, rest, n, angle_scale=np.pi):
    """Random poses: root near the rest root, rotations with angles up to ``angle_scale``."""
    J = tree.joint_count
    axes = rng.standard_normal((n, J, 3))
    axes /= np.linalg.norm(axes, axis=-1, keepdims=True)
    angles = rng.uniform(0.0, angle_scale, (n, J, 1))
    q = qk.rotvec_to_quat(axes * angles)
    q[:, tree.root] = qk.IDENTITY
    T = rest.positions[tree.root] + rng.normal(0.0, 500.0, (n, 3))
    return T, q


def _relative_error(analytic, numeric):
    """Infinity-norm relative error ``max|a - n| / max|n|``."""
    scale = max(float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def roundtrip_suite(tree, rest, seed=0, n=1000, backend=None):
    """FK/IK exactness: identity pose, bone lengths and fk(ik(fk(P))) round trip."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    ident = kl.identity_params(rest, tree)
    rest_err = float(np.max(np.abs(kl.fk(ident, rest, tree, backend) - rest.positions)))

    T, q = random_params(rng, tree, rest, n)
    pos = kl.fk_batch(T, q, rest, tree, backend)
    lengths = sk.bone_lengths(pos, tree)[:, list(tree.nonroot)]
    length_err = float(np.max(np.abs(lengths / rest.lengths[list(tree.nonroot)] - 1.0)))

    T2, q2 = kl.ik_batch(pos, rest, tree, backend=backend)
    back = kl.fk_batch(T2, q2, rest, tree, backend)
    trip_err = float(np.max(np.linalg.norm(back - pos, axis=-1)))
    seconds = time.perf_counter() - start
    passed = rest_err <= REST_TOL_MM and length_err <= LENGTH_TOL_REL and trip_err <= ROUNDTRIP_TOL_MM
    return {
        "suite": "roundtrip", "seed": seed, "poses": n,
        "rest_error_mm": rest_err, "rest_tol_mm": REST_TOL_MM,
        "bone_length_rel_error": length_err, "bone_length_tol": LENGTH_TOL_REL,
        "roundtrip_error_mm": trip_err, "roundtrip_tol_mm": ROUNDTRIP_TOL_MM,
        "seconds": seconds, "passed": bool(passed),
    }


def _fk_gradcheck(rng, tree, rest, h, backend):
    T, q = random_params(rng, tree, rest, 1)
    upstream = rng.standard_normal((1, tree.joint_count, 3))
    dT, dq = kl.fk_backward_batch(T, q, upstream, rest, tree, backend)
    nonroot = list(tree.nonroot)
    analytic = np.concatenate([dT[0], dq[0, nonroot].ravel()])

    # all perturbed copies in one batch: +h then -h for every coordinate
    P = analytic.size
    Tb = np.repeat(T, 2 * P, axis=0)
    qb = np.repeat(q, 2 * P, axis=0)
    for i in range(P):
        for s, row in ((h, 2 * i), (-h, 2 * i + 1)):
            if i < 3:
                Tb[row, i] += s
            else:
                j, c = divmod(i - 3, 4)
                qb[row, nonroot[j], c] += s
    L = np.sum(kl.fk_batch(Tb, qb, rest, tree, backend) * upstream, axis=(1, 2))
    numeric = (L[0::2] - L[1::2]) / (2 * h)
    return _relative_error(analytic, numeric)


def _loss_batch(rng, tree, rest, n_frames):
    """Synthetic training batch: noisy vision IK, perturbed IMU rotations, exact targets."""
    T, q_gt = random_params(rng, tree, rest, n_frames, angle_scale=1.0)
    p_gt = kl.fk_batch(T, q_gt, rest, tree)
    p_vis = p_gt + rng.normal(0.0, 20.0, p_gt.shape)
    T_vis, q_vis = kl.ik_batch(p_vis, rest, tree)
    G_gt = qk.canonicalize(ada._global_rotations(q_gt, rest, tree))
    joints = [tree.sensor_joint[k] for k in tree.sensors]
    noise = qk.rotvec_to_quat(rng.normal(0.0, 0.1, (n_frames, len(joints), 3)))
    q_imu = qk.quat_mul(noise, G_gt[:, joints])
    return {"T": T_vis, "q_vis": q_vis, "q_imu": q_imu, "q_gt": q_gt, "G_gt": G_gt, "p_gt": p_gt,
            "p_vis": p_vis}


def _loss_gradcheck(rng, tree, rest, architecture, h, n_frames=4, n_directions=3, n_coords=6):
    config = ada.FusionConfig(mlp_hidden=(16, 16), architecture=architecture, alpha=1.0,
                              seed=int(rng.integers(2 ** 31)))
    model = ada.init_model(tree, config)
    # a nonzero output layer so every path carries gradient
    model.weights[-1] = rng.normal(0.0, 0.05, model.weights[-1].shape)
    model.biases[-1] = model.biases[-1] + rng.normal(0.0, 0.05, model.biases[-1].shape)
    batch = _loss_batch(rng, tree, rest, n_frames)
    params = model.weights + model.biases

    def loss():
        return ada._batch_loss(model, batch, rest, tree, config.alpha, config.smooth_l1_beta)[0]

    _, _, gW, gb = ada.loss_and_grad(model, batch, rest, tree, config.alpha, config.smooth_l1_beta)
    grads = gW + gb
    analytic, numeric = [], []
    for _ in range(n_directions):
        dirs = [rng.standard_normal(p.shape) for p in params]
        analytic.append(sum(float(np.sum(g * d)) for g, d in zip(grads, dirs)))
        for p, d in zip(params, dirs):
            p += h * d
        up = loss()
        for p, d in zip(params, dirs):
            p -= 2 * h * d
        down = loss()
        for p, d in zip(params, dirs):
            p += h * d
        numeric.append((up - down) / (2 * h))
    for _ in range(n_coords):
        k = int(rng.integers(len(params)))
        idx = tuple(int(rng.integers(s)) for s in params[k].shape)
        analytic.append(float(grads[k][idx]))
        old = params[k][idx]
        params[k][idx] = old + h
        up = loss()
        params[k][idx] = old - h
        down = loss()
        params[k][idx] = old
        numeric.append((up - down) / (2 * h))
    return _relative_error(np.array(analytic), np.array(numeric))


def gradcheck_suite(tree, rest, seed=0, n=100, backend=None):
    """Central-difference checks of the FK VJP and of the full AdaFuse loss gradient.

    Each configuration draws a fresh random pose (FK) or a fresh random model
    and batch (loss; both architectures alternate). Errors are infinity-norm
    relative errors per configuration; the suite reports their maximum.
    """
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    fk_errors = [_fk_gradcheck(rng, tree, rest, 1e-6, backend) for _ in range(n)]
    loss_errors = [_loss_gradcheck(rng, tree, rest, ada.ARCHITECTURES[i % 2], 1e-6) for i in range(n)]
    fk_max, loss_max = max(fk_errors), max(loss_errors)
    return {
        "suite": "gradcheck", "seed": seed, "configurations": n,
        "fk_max_rel_error": fk_max, "fk_tol": FK_GRAD_TOL,
        "loss_max_rel_error": loss_max, "loss_tol": LOSS_GRAD_TOL,
        "seconds": time.perf_counter() - start,
        "passed": bool(fk_max <= FK_GRAD_TOL and loss_max <= LOSS_GRAD_TOL),
    }


def rotation_suite(seed=0, n=100_000):
    """Rodrigues vs quaternion path, conversion round trips and the half-turn branch."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    axes = rng.standard_normal((n, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = rng.uniform(0.0, np.pi, n)
    aa = (axes, angles)
    rod_err = float(np.max(np.abs(qk.rodrigues(aa) - qk.quat_to_matrix(qk.axis_angle_to_quat(aa)))))

    q = qk.random_quaternions(rng, n)
    # half turns exercise the trace = -1 branch of matrix_to_quat
    half = qk.axis_angle_to_quat((axes[:1000], np.full(1000, np.pi)))
    basis = np.array([[0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    q = np.concatenate([q, half, basis, qk.IDENTITY[None]])
    back = qk.matrix_to_quat(qk.quat_to_matrix(q))
    mat_err = float(np.max(np.minimum(np.abs(back - q).max(axis=1), np.abs(back + q).max(axis=1))))
    aa_back = qk.rotvec_to_quat(qk.quat_to_rotvec(q))
    aa_err = float(np.max(np.minimum(np.abs(aa_back - q).max(axis=1), np.abs(aa_back + q).max(axis=1))))
    conv_err = max(mat_err, aa_err)
    return {
        "suite": "rotation", "seed": seed, "samples": n,
        "rodrigues_error": rod_err, "rodrigues_tol": ROTATION_TOL,
        "conversion_error": conv_err, "conversion_tol": CONVERSION_TOL,
        "seconds": time.perf_counter() - start,
        "passed": bool(rod_err <= ROTATION_TOL and conv_err <= CONVERSION_TOL),
    }


def oracle_suite(tree, rest, seed=0, n_frames=200, corruption_mm=150.0):
    """Zero-noise pipeline: calibration recovers truth, KineFuse at theta 0 restores limb directions."""
    ds = generate_sequence(tree, rest, n_frames, noise=NoiseConfig.zero(seed), random_calibration=True)
    aligned = ds.aligned_imu()
    truth = true_imu_rotations(ds.gt_params, rest, tree, ds.sensors)
    cal_err = float(np.max(np.minimum(np.abs(aligned.q_global - truth).max(axis=-1),
                                      np.abs(aligned.q_global + truth).max(axis=-1))))

    rng = np.random.default_rng(seed)
    limbs = list(sk.imu_related_joints(tree))
    corrupted = ds.gt_pose.copy()
    corrupted[:, limbs] += rng.normal(0.0, corruption_mm, (n_frames, len(limbs), 3))
    _, fused = kine_fuse(corrupted, aligned, rest, tree, 0.0)
    parents = [tree.parents[j] for j in limbs]
    got = fused[:, limbs] - fused[:, parents]
    want = ds.gt_pose[:, limbs] - ds.gt_pose[:, parents]
    got /= np.linalg.norm(got, axis=-1, keepdims=True)
    want /= np.linalg.norm(want, axis=-1, keepdims=True)
    dir_err = float(np.max(np.abs(got - want)))
    return {
        "suite": "oracle", "seed": seed, "frames": n_frames,
        "calibration_error": cal_err, "direction_error": dir_err, "tol": ORACLE_TOL,
        "passed": bool(cal_err <= ORACLE_TOL and dir_err <= ORACLE_TOL),
    }

"""AdaDeepFuse: a learned fusion of vision and IMU pose parameters, trained through FK.

Two MLP layouts are available (``FusionConfig.architecture``):

``"bone"`` (default)
    One MLP shared by all sensors, applied per sensor-carrying bone. Its
    input row is the unit local rest bone ``b_j`` and the vision bone
    direction seen from the IMU, ``d = qbar^-1 . v_vis`` (both 3-vectors, so
    the row does not depend on the global pose). It outputs a correction
    ``c`` and the bone's total rotation becomes ``G_j = qbar * normalize(1 + c)``.
    Bones without a sensor keep their vision rotations; the fused pose is
    FK with those total rotations substituted, as in KineFuse.

``"flat"``
    One MLP over the flattened concatenation of the vision local rotations
    (non-root joints) and one quaternion per IMU, predicting every non-root
    local rotation. ``imu_input="unwound"`` expresses each IMU rotation in
    its bone's local frame (see :func:`imu_features`); ``"qbar"`` feeds it as
    is. With ``residual`` the vision rotations are added to the output.

Both end with per-joint normalisation; the root translation passes through
from vision.

Loss per frame: ``SmoothL1(P - P_gt) + alpha * SmoothL1(q - q_gt)``, summed
over components and averaged over frames. ``q`` is sign-aligned to ``q_gt``
joint by joint. The rotation term compares what the layout predicts: local
rotations of non-root joints for ``"flat"``, total rotations of the sensor
bones for ``"bone"``.
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import kinelayers as kl
from .. import quatkin as qk
from ..errors import ConfigError, MalformedFileError, ShapeError, TrainingError, VersionMismatchError

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "kinefuse-adafuse"
CHECKPOINT_VERSION = 1
ARCHITECTURES = ("bone", "flat")
IMU_INPUTS = ("unwound", "qbar")
LR_SCHEDULES = ("constant", "cosine")
BONE_FEATURES = 6


@dataclass
class FusionConfig:
    theta_t: float = 0.25
    alpha: float = 1e-2
    mlp_hidden: tuple = (256, 256)
    smooth_l1_beta: float = 1.0
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    residual: bool = True
    screen_against: str = "vision"
    architecture: str = "bone"
    imu_input: str = "unwound"
    lr_schedule: str = "cosine"

    def __post_init__(self):
        self.mlp_hidden = tuple(int(w) for w in self.mlp_hidden)
        if self.theta_t < 0:
            raise ConfigError("theta_t must be >= 0")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if any(w <= 0 for w in self.mlp_hidden):
            raise ConfigError("mlp_hidden widths must be positive")
        if self.smooth_l1_beta <= 0:
            raise ConfigError("smooth_l1_beta must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.screen_against not in ("vision", "rest"):
            raise ConfigError("screen_against must be 'vision' or 'rest'")
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"architecture must be one of {ARCHITECTURES}")
        if self.imu_input not in IMU_INPUTS:
            raise ConfigError(f"imu_input must be one of {IMU_INPUTS}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}")

    def to_dict(self):
        d = asdict(self)
        d["mlp_hidden"] = list(self.mlp_hidden)
        return d


@dataclass
class AdaFuseModel:
    """Weights ``(W, b)`` per layer; ``W`` has shape (fan_in, fan_out).

    ``joints[i]`` is the joint whose bone carries ``sensors[i]``.
    """

    weights: list
    biases: list
    nonroot: tuple
    sensors: tuple
    joints: tuple
    joint_count: int
    residual: bool = True
    config: FusionConfig = field(default_factory=FusionConfig)

    @property
    def architecture(self):
        return self.config.architecture

    @property
    def n_in(self):
        if self.architecture == "bone":
            return BONE_FEATURES
        return 4 * (len(self.nonroot) + len(self.sensors))

    @property
    def n_out(self):
        return 4 if self.architecture == "bone" else 4 * len(self.nonroot)


def init_model(tree, config=None, sensors=None):
    """He-initialised hidden layers; the output layer starts at zero.

    A fresh model therefore returns the vision rotations (``"flat"`` with
    ``residual``) or the IMU rotations on sensor bones (``"bone"``). Without
    the residual the output bias starts at the identity quaternion.
    """
    config = config or FusionConfig()
    rng = np.random.default_rng(config.seed)
    nonroot = tuple(tree.nonroot)
    sensors = tuple(tree.sensors if sensors is None else sensors)
    unknown = [k for k in sensors if k not in tree.sensor_joint]
    if unknown:
        raise ConfigError(f"sensors {unknown} are not mounted on this skeleton")
    joints = tuple(tree.sensor_joint[k] for k in sensors)
    model = AdaFuseModel([], [], nonroot, sensors, joints, tree.joint_count, config.residual, config)
    sizes = [model.n_in, *config.mlp_hidden, model.n_out]
    for fan_in, fan_out in zip(sizes[:-2], sizes[1:-1]):
        model.weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        model.biases.append(np.zeros(fan_out))
    model.weights.append(np.zeros((sizes[-2], sizes[-1])))
    out_bias = np.zeros((model.n_out // 4, 4))
    if not config.residual:
        out_bias[:, 0] = 1.0
    model.biases.append(out_bias.ravel())
    return model


def _global_rotations(q, rest, tree):
    q = np.asarray(q, dtype=float)
    _, G = kl.fk_batch(np.zeros((q.shape[0], 3)), q, rest, tree, return_global=True)
    return G


def imu_features(q_vis, q_imu, joints, rest, tree, mode="unwound"):
    """Per-sensor IMU quaternions (N, K, 4) for the ``"flat"`` layout.

    ``"unwound"`` gives ``(G_pa * A_j)^-1 * qbar_j`` where ``G_pa`` is the
    parent's IMU rotation if the parent carries one of ``joints`` and its
    vision rotation otherwise. Substituting every row into the vision
    parameters then reproduces KineFuse with all sensors replaced.
    """
    q_imu = np.asarray(q_imu, dtype=float)
    if mode == "qbar":
        return q_imu
    if mode != "unwound":
        raise ConfigError(f"imu_input must be one of {IMU_INPUTS}")
    G = _global_rotations(q_vis, rest, tree)
    joints = list(joints)
    G[:, joints] = q_imu
    parents = [tree.parents[j] for j in joints]
    pre = qk.quat_mul(G[:, parents], rest.fk_offsets[joints])
    return qk.canonicalize(qk.quat_mul(qk.quat_inv(pre), q_imu))


def features(model, q_vis, q_imu, rest, tree):
    """MLP input: (N, n_in) for ``"flat"``, (N, K, 6) for ``"bone"``."""
    q_vis = np.asarray(q_vis, dtype=float)
    q_imu = np.asarray(q_imu, dtype=float)
    if q_vis.ndim != 3 or q_vis.shape[1:] != (model.joint_count, 4) \
            or q_imu.shape != (q_vis.shape[0], len(model.sensors), 4):
        raise ShapeError(f"expected q_vis (N, {model.joint_count}, 4) and q_imu (N, {len(model.sensors)}, 4), "
                         f"got {q_vis.shape} and {q_imu.shape}")
    n = q_vis.shape[0]
    joints = list(model.joints)
    if model.architecture == "bone":
        b = rest.bones_local[joints] / np.linalg.norm(rest.bones_local[joints], axis=-1, keepdims=True)
        G = _global_rotations(q_vis, rest, tree)
        v = qk.quat_rotate_vec(G[:, joints], b)
        d = qk.quat_rotate_vec(qk.quat_conj(q_imu), v)
        return np.concatenate([np.broadcast_to(b, d.shape), d], axis=-1)
    rows = imu_features(q_vis, q_imu, joints, rest, tree, model.config.imu_input)
    return np.concatenate([q_vis[:, list(model.nonroot)].reshape(n, -1), rows.reshape(n, -1)], axis=1)


def _mlp_forward(model, x):
    acts = [x]
    h = x
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ W + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return h, acts


def _mlp_backward(model, acts, grad_out):
    gW = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    g = grad_out
    for i in range(len(model.weights) - 1, -1, -1):
        gW[i] = acts[i].T @ g
        gb[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ model.weights[i].T) * (acts[i] > 0)
    return gW, gb


def _raw_outputs(model, q_vis, q_imu, rest, tree):
    """Unnormalised MLP outputs and the cache for backprop.

    ``"flat"``: local rotations (N, J, 4), root row identity.
    ``"bone"``: total rotations (N, K, 4) of the sensor bones.
    """
    x = features(model, q_vis, q_imu, rest, tree)
    n = q_vis.shape[0]
    if model.architecture == "bone":
        out, acts = _mlp_forward(model, x.reshape(-1, BONE_FEATURES))
        c = out.reshape(n, len(model.sensors), 4).copy()
        if model.residual:
            c[..., 0] += 1.0
        return qk._hamilton(q_imu, c), acts
    out, acts = _mlp_forward(model, x)
    u = out.reshape(n, len(model.nonroot), 4)
    if model.residual:
        u = u + q_vis[:, list(model.nonroot)]
    raw = np.zeros((n, model.joint_count, 4))
    raw[:, :, 0] = 1.0
    raw[:, list(model.nonroot)] = u
    return raw, acts


def _override(model, q_vis, totals):
    G = np.zeros(q_vis.shape)
    G[:, list(model.joints)] = totals
    mask = np.zeros(q_vis.shape[:2], dtype=bool)
    mask[:, list(model.joints)] = True
    return G, mask


def ada_forward(model, q_vis, q_imu, rest, tree):
    """Fused local rotations (N, J, 4): unit, canonical hemisphere, root identity.

    ``q_imu`` holds the aligned rotations ``qbar`` (N, K, 4) in ``model.sensors`` order.
    """
    q_vis = np.asarray(q_vis, dtype=float)
    q_imu = np.asarray(q_imu, dtype=float)
    raw, _ = _raw_outputs(model, q_vis, q_imu, rest, tree)
    if model.architecture == "bone":
        G, mask = _override(model, q_vis, raw)
        return kl.override_to_local(q_vis, G, mask, rest, tree)
    q = qk.quat_normalize(raw)
    q[:, tree.root] = qk.IDENTITY
    return q


def _predict(model, T, q_vis, q_imu, rest, tree):
    """Fused positions (N, J, 3) and the raw outputs."""
    raw, acts = _raw_outputs(model, q_vis, q_imu, rest, tree)
    if model.architecture == "bone":
        G, mask = _override(model, q_vis, raw)
        return kl.fk_override_batch(T, q_vis, G, mask, rest, tree), raw, acts
    return kl.fk_batch(T, raw, rest, tree), raw, acts


def ada_fuse(model, vis_pose, aligned, rest, tree):
    """Full AdaDeepFuse inference: IK on vision, MLP fusion, FK. Returns (PoseParams, positions)."""
    pose = np.asarray(vis_pose, dtype=float)
    single = pose.ndim == 2
    if single:
        pose = pose[None]
        aligned = aligned.frames(np.newaxis)
    aligned = aligned.subset(model.sensors)
    T, q_vis = kl.ik_batch(pose, rest, tree)
    q = ada_forward(model, q_vis, aligned.q_local, rest, tree)
    fused = kl.fk_batch(T, q, rest, tree)
    if single:
        return kl.PoseParams(T[0], q[0]), fused[0]
    return kl.PoseParams(T, q), fused


def smooth_l1(x, beta):
    """Elementwise smoothed L1 and its derivative."""
    ax = np.abs(x)
    small = ax < beta
    value = np.where(small, 0.5 * x * x / beta, ax - 0.5 * beta)
    grad = np.where(small, x / beta, np.sign(x))
    return value, grad


def ada_loss(p_fused, p_gt, q_fused, q_gt, alpha=1e-2, beta=1.0, joints=None):
    """``SmoothL1(p) + alpha * SmoothL1(q)``, summed per frame and averaged over frames.

    ``p_*`` are (N, J, 3) positions and ``q_*`` (N, M, 4) unit quaternions
    (``joints`` selects the rows of ``q`` that enter the loss, default all).
    Returns ``(loss, d_loss/d_p_fused, d_loss/d_q_fused)``.
    """
    p_fused = np.asarray(p_fused, dtype=float)
    q_fused = np.asarray(q_fused, dtype=float)
    q_gt = np.asarray(q_gt, dtype=float)
    if p_fused.ndim == 2:
        p_fused, p_gt, q_fused, q_gt = p_fused[None], np.asarray(p_gt)[None], q_fused[None], q_gt[None]
    n = p_fused.shape[0]
    sel = slice(None) if joints is None else list(joints)
    pos_val, pos_grad = smooth_l1(p_fused - p_gt, beta)

    qf = q_fused[:, sel]
    sign = np.where(np.sum(qf * q_gt[:, sel], axis=-1, keepdims=True) < 0, -1.0, 1.0)
    par_val, par_grad = smooth_l1(sign * qf - q_gt[:, sel], beta)

    loss = (pos_val.sum() + alpha * par_val.sum()) / n
    dq = np.zeros_like(q_fused)
    dq[:, sel] = alpha * sign * par_grad / n
    return float(loss), pos_grad / n, dq


def loss_and_grad(model, batch, rest, tree, alpha, beta):
    """Loss of a batch and gradients for every weight and bias.

    ``batch`` is a dict from :func:`prepare_sequences` (or a slice of one).
    Returns ``(loss, positions, grad_W, grad_b)``.
    """
    T, q_vis, q_imu = batch["T"], batch["q_vis"], batch["q_imu"]
    pose, raw, acts = _predict(model, T, q_vis, q_imu, rest, tree)
    norm = np.linalg.norm(raw, axis=-1, keepdims=True)
    unit = raw / norm
    n = raw.shape[0]
    if model.architecture == "bone":
        target = batch["G_gt"][:, list(model.joints)]
        loss, d_pose, d_unit = ada_loss(pose, batch["p_gt"], unit, target, alpha, beta)
        G, mask = _override(model, q_vis, raw)
        d_raw = kl.fk_override_backward_batch(T, q_vis, G, mask, d_pose, rest, tree)[:, list(model.joints)]
        d_raw += (d_unit - unit * np.sum(unit * d_unit, axis=-1, keepdims=True)) / norm
        # raw = qbar * c, so d/dc = conj(qbar) * d/draw
        g_out = qk._hamilton(qk.quat_conj(q_imu), d_raw).reshape(-1, 4)
    else:
        loss, d_pose, d_unit = ada_loss(pose, batch["p_gt"], unit, batch["q_gt"], alpha, beta, model.nonroot)
        _, d_raw = kl.fk_backward_batch(T, raw, d_pose, rest, tree)
        d_raw += (d_unit - unit * np.sum(unit * d_unit, axis=-1, keepdims=True)) / norm
        g_out = d_raw[:, list(model.nonroot)].reshape(n, -1)
    gW, gb = _mlp_backward(model, acts, g_out)
    return loss, pose, gW, gb


def prepare_sequences(datasets, sensors=None):
    """Stacked training arrays for a list of datasets.

    ``T`` and ``q_vis`` come from canonical IK on vision, ``q_imu`` is the
    aligned ``qbar`` per sensor, ``q_gt`` / ``G_gt`` are the ground-truth
    local and total rotations, ``p_gt`` / ``p_vis`` the positions.
    """
    cols = {"T": [], "q_vis": [], "q_imu": [], "q_gt": [], "G_gt": [], "p_gt": [], "p_vis": []}
    for ds in datasets:
        aligned = ds.aligned_imu(sensors)
        T, q_vis = kl.ik_batch(ds.vis_pose, ds.rest, ds.tree)
        q_gt = qk.quat_normalize(ds.gt_q)
        q_gt[:, ds.tree.root] = qk.IDENTITY
        cols["T"].append(T)
        cols["q_vis"].append(q_vis)
        cols["q_imu"].append(aligned.q_local)
        cols["q_gt"].append(q_gt)
        cols["G_gt"].append(qk.canonicalize(_global_rotations(q_gt, ds.rest, ds.tree)))
        cols["p_gt"].append(ds.gt_pose)
        cols["p_vis"].append(ds.vis_pose)
    if not cols["T"]:
        raise TrainingError("no sequences given")
    return {k: np.concatenate(v, axis=0) for k, v in cols.items()}


def _take(data, idx):
    return {k: v[idx] for k, v in data.items()}


def evaluate(model, data, rest, tree, alpha, beta, chunk=4096):
    """Mean loss and MPJPE (mm) over prepared data."""
    n = data["T"].shape[0]
    total_loss = 0.0
    dist = []
    for start in range(0, n, chunk):
        part = _take(data, slice(start, start + chunk))
        loss, pose = _batch_loss(model, part, rest, tree, alpha, beta)
        total_loss += loss * part["T"].shape[0]
        dist.append(np.linalg.norm(pose - part["p_gt"], axis=-1))
    return total_loss / n, float(np.concatenate(dist).mean())


def _batch_loss(model, batch, rest, tree, alpha, beta):
    """Loss and fused positions of a batch, without gradients."""
    pose, raw, _ = _predict(model, batch["T"], batch["q_vis"], batch["q_imu"], rest, tree)
    unit = raw / np.linalg.norm(raw, axis=-1, keepdims=True)
    if model.architecture == "bone":
        loss, _, _ = ada_loss(pose, batch["p_gt"], unit, batch["G_gt"][:, list(model.joints)], alpha, beta)
    else:
        loss, _, _ = ada_loss(pose, batch["p_gt"], unit, batch["q_gt"], alpha, beta, model.nonroot)
    return loss, pose


class Adam:
    """Plain Adam updating ``params`` (a list of arrays) in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train_ada(train_sets, tree, rest, config=None, val_sets=None, sensors=None, model=None):
    """Minibatch Adam training. Returns ``(model, log)``; ``log`` has one dict per epoch.

    Epoch 0 in the log is the untrained model. Deterministic for a fixed
    ``config.seed``.
    """
    config = config or FusionConfig()
    data = prepare_sequences(train_sets, sensors) if isinstance(train_sets, (list, tuple)) else train_sets
    n = data["T"].shape[0]
    if n == 0:
        raise TrainingError("training set is empty")
    val = None
    if val_sets:
        val = prepare_sequences(val_sets, sensors) if isinstance(val_sets, (list, tuple)) else val_sets
    model = model or init_model(tree, config, sensors)
    rng = np.random.default_rng(config.seed + 1)
    nw = len(model.weights)
    opt = Adam(model.weights + model.biases, lr=config.learning_rate)
    history = []

    def record(epoch, train_loss=None):
        tl, tm = evaluate(model, data, rest, tree, config.alpha, config.smooth_l1_beta)
        entry = {"epoch": epoch, "train_loss": tl, "train_mpjpe": tm}
        if train_loss is not None:
            entry["running_loss"] = train_loss
        if val is not None:
            vl, vm = evaluate(model, val, rest, tree, config.alpha, config.smooth_l1_beta)
            entry.update(val_loss=vl, val_mpjpe=vm)
        history.append(entry)
        log.info("epoch %d %s", epoch, {k: round(v, 4) for k, v in entry.items() if k != "epoch"})

    record(0)
    for epoch in range(1, config.epochs + 1):
        if config.lr_schedule == "cosine":
            # half cosine from the base rate at epoch 1 towards zero after the last epoch
            opt.lr = config.learning_rate * 0.5 * (1.0 + np.cos(np.pi * (epoch - 1) / config.epochs))
        perm = rng.permutation(n)
        running = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            loss, _, gW, gb = loss_and_grad(model, _take(data, idx), rest, tree,
                                            config.alpha, config.smooth_l1_beta)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at epoch {epoch}, batch starting {start}")
            opt.step(gW + gb)
            running += loss * len(idx)
        record(epoch, running / n)
        if not all(np.all(np.isfinite(p)) for p in opt.params[:nw]):
            raise TrainingError(f"non-finite weights after epoch {epoch}")
    return model, history


# ---------------------------------------------------------------------------
# checkpoints

_CONVENTIONS = {
    "bone": "per sensor: x = [b_j/|b_j|, conj(qbar) . v_vis]; h = relu(h @ W + b) for hidden layers; "
            "c = h @ W + b (+ identity if residual); G_j = qbar * c, normalised, substituted in FK",
    "flat": "x = [q_vis[nonroot], imu_features(sensors)] flattened wxyz; h = relu(h @ W + b) for hidden "
            "layers; out = h @ W + b (+ q_vis if residual); per-joint normalise",
}


def model_to_dict(model):
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "architecture": model.architecture,
        "convention": _CONVENTIONS[model.architecture],
        "joint_count": model.joint_count,
        "nonroot": list(model.nonroot),
        "sensors": list(model.sensors),
        "joints": list(model.joints),
        "residual": model.residual,
        "config": model.config.to_dict(),
        "seed": model.config.seed,
        "layers": [{"fan_in": int(W.shape[0]), "fan_out": int(W.shape[1]),
                    "weight": W.tolist(), "bias": b.tolist()}
                   for W, b in zip(model.weights, model.biases)],
    }


def model_from_dict(doc):
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise MalformedFileError("not an AdaFuse checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"checkpoint version {doc.get('version')!r}, expected {CHECKPOINT_VERSION}")
    try:
        weights, biases = [], []
        for layer in doc["layers"]:
            W = np.array(layer["weight"], dtype=float).reshape(layer["fan_in"], layer["fan_out"])
            weights.append(W)
            biases.append(np.array(layer["bias"], dtype=float).reshape(layer["fan_out"]))
        config = FusionConfig(**doc["config"])
        model = AdaFuseModel(weights, biases, tuple(doc["nonroot"]), tuple(doc["sensors"]), tuple(doc["joints"]),
                             int(doc["joint_count"]), bool(doc["residual"]), config)
    except (KeyError, TypeError, ValueError, ConfigError) as exc:
        raise MalformedFileError(f"malformed checkpoint: {exc}") from exc
    sizes = [model.n_in] + [W.shape[1] for W in weights]
    if not weights or weights[0].shape[0] != model.n_in or sizes[-1] != model.n_out \
            or any(W.shape[0] != w for W, w in zip(weights[1:], sizes[1:-1])):
        raise MalformedFileError("checkpoint layer sizes do not fit its architecture")
    return model


def save_model(model, path):
    Path(path).write_text(json.dumps(model_to_dict(model), separators=(",", ":")) + "\n")


def load_model(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MalformedFileError(f"{path}: checkpoint is not valid JSON") from exc
    return model_from_dict(doc)

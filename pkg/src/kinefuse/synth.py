"""Seeded synthetic motion, vision and IMU data.

A sequence is generated from one integer seed. ``SeedSequence(seed).spawn(4)``
gives four independent PCG64 streams, used in this order: calibration
offsets, ground-truth motion, vision noise, IMU drift.

Dataset files are JSON Lines:

* line 1, header: format, version, skeleton, calibration, sensor order,
  provenance (seed, configs, generator version)
* one line per frame: ``frame``, ``gt_T``, ``gt_q`` (J x 4), ``gt_pose`` and
  ``vis_pose`` (J x 3, mm), ``imu`` (K x 4 raw quaternions, header order)
* trailer: ``{"end": true, "n_frames": N, "sha256": ...}`` where the digest
  covers every preceding line including newlines

Floats are written with ``repr``, the shortest string that round-trips
exactly, so reading a file back is lossless.
"""
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import imu as imu_mod
from . import kinelayers as kl
from . import quatkin as qk
from . import skeleton as sk
from .errors import (CalibrationError, ChecksumError, ConfigError, MalformedFileError,
                     VersionMismatchError)

DATASET_FORMAT = "kinefuse-dataset"
DATASET_VERSION = 1
RNG_NAME = "numpy.PCG64/SeedSequence.spawn(4)[calibration,motion,vision,imu]"


@dataclass
class NoiseConfig:
    vision_jitter_sigma: float = 15.0
    occlusion_prob: float = 0.3
    occlusion_sigma: float = 80.0
    bone_scale_sigma: float = 0.03
    imu_drift_rate: float = 0.002
    seed: int = 0
    jitter_correlation: float = 0.6

    def __post_init__(self):
        for name in ("vision_jitter_sigma", "occlusion_sigma", "bone_scale_sigma", "imu_drift_rate"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if not 0.0 <= self.occlusion_prob <= 1.0:
            raise ConfigError("occlusion_prob must lie in [0, 1]")
        if not 0.0 <= self.jitter_correlation < 1.0:
            raise ConfigError("jitter_correlation must lie in [0, 1)")

    @classmethod
    def zero(cls, seed=0):
        return cls(vision_jitter_sigma=0.0, occlusion_prob=0.0, occlusion_sigma=0.0,
                   bone_scale_sigma=0.0, imu_drift_rate=0.0, seed=seed)


@dataclass
class MotionConfig:
    """Bounded, damped random walk on each joint's rotation vector (radians).

    ``max_step`` caps the per-frame change of a rotation vector, which also
    bounds the frame-to-frame rotation angle of every joint.
    """

    step_sigma: float = 0.01
    damping: float = 0.95
    max_step: float = 0.05
    limb_amplitude: float = 1.0
    torso_amplitude: float = 0.3
    twist_amplitude: float = 0.6
    root_step_sigma: float = 1.5
    root_max_step: float = 20.0
    root_extent: float = 1000.0


# ---------------------------------------------------------------------------
# ground truth motion

def _perpendicular_basis(d):
    d = d / np.linalg.norm(d)
    a = np.zeros(3)
    a[np.argmin(np.abs(d))] = 1.0
    e1 = np.cross(d, a)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(d, e1), d


def twist_joints(tree):
    """Sensor-carrying bones that have further sensor-carrying bones below them."""
    out = []
    for j in tree.imu_map:
        if any(c in tree.imu_map for c in tree.children(j)):
            out.append(j)
    return tuple(sorted(out))


def generate_motion(tree, rest, n_frames, seed=0, config=None, rng=None):
    """Smooth random ground-truth :class:`~kinefuse.kinelayers.PoseParams` for ``n_frames``."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    config = config or MotionConfig()
    rng = np.random.default_rng(seed) if rng is None else rng
    J = tree.joint_count
    twisting = set(twist_joints(tree))

    # per joint: a bone-aligned basis and per-axis amplitude caps
    bases = np.zeros((J, 3, 3))
    caps = np.zeros((J, 3))
    for j in tree.nonroot:
        e1, e2, d = _perpendicular_basis(rest.bones_local[j])
        bases[j] = np.stack([e1, e2, d])
        bend = config.limb_amplitude if j in tree.imu_map else config.torso_amplitude
        caps[j] = (bend, bend, config.twist_amplitude if j in twisting else 0.0)

    x = rng.uniform(-0.5, 0.5, size=(J, 3)) * caps
    v = np.zeros((J, 3))
    per_axis_step = config.max_step / np.sqrt(3.0)
    rotvecs = np.empty((n_frames, J, 3))

    root = rest.positions[tree.root].copy()
    root_v = np.zeros(3)
    T = np.empty((n_frames, 3))
    root_lo = rest.positions[tree.root] - (config.root_extent, config.root_extent, 30.0)
    root_hi = rest.positions[tree.root] + (config.root_extent, config.root_extent, 30.0)

    for t in range(n_frames):
        if t > 0:
            v = config.damping * v + rng.normal(0.0, config.step_sigma, size=(J, 3))
            v = np.clip(v, -per_axis_step, per_axis_step) * (caps > 0)
            x = x + v
            over = np.abs(x) > caps
            x = np.where(over, np.sign(x) * caps, x)
            v = np.where(over, -v, v)

            root_v = config.damping * root_v + rng.normal(0.0, config.root_step_sigma, size=3)
            root_v = np.clip(root_v, -config.root_max_step / np.sqrt(3.0), config.root_max_step / np.sqrt(3.0))
            root = root + root_v
            out = (root < root_lo) | (root > root_hi)
            root = np.clip(root, root_lo, root_hi)
            root_v = np.where(out, -root_v, root_v)
        rotvecs[t] = np.einsum("jc,jca->ja", x, bases)
        T[t] = root

    q = qk.rotvec_to_quat(rotvecs)
    q[:, tree.root] = qk.IDENTITY
    return kl.PoseParams(T, q)


# ---------------------------------------------------------------------------
# sensor simulation

def vision_noise_joints(tree):
    """Limb joints that receive occlusion spikes: the ends of sensor-carrying bones."""
    return sk.imu_related_joints(tree)


def simulate_vision(gt_pose, tree, noise, rng):
    """Noisy triangulation stand-in: bone stretch, isotropic jitter and occlusion spikes.

    Jitter is isotropic with per-coordinate std ``vision_jitter_sigma`` at
    every joint, correlated along bones: ``e_j = rho * e_pa + sqrt(1 - rho^2) * n_j``
    with ``rho = jitter_correlation``. Bone lengths are scaled by
    ``1 + bone_scale_sigma * N(0, 1)`` per bone and frame, and the stretch
    carries down to every joint below. Sensor-bone end joints get an extra
    ``N(0, occlusion_sigma^2)`` spike with probability ``occlusion_prob``.

    The same random draws are consumed whatever the noise levels, so a run
    with some sigmas set to zero sees the same remaining noise.
    """
    gt_pose = np.asarray(gt_pose, dtype=float)
    single = gt_pose.ndim == 2
    pose = gt_pose[None] if single else gt_pose
    N, J = pose.shape[:2]
    limb = np.asarray(vision_noise_joints(tree), dtype=int)

    scale = rng.standard_normal((N, J)) * noise.bone_scale_sigma
    jitter = rng.standard_normal((N, J, 3)) * noise.vision_jitter_sigma
    occluded = rng.random((N, len(limb))) < noise.occlusion_prob
    spikes = rng.standard_normal((N, len(limb), 3)) * noise.occlusion_sigma

    # stretched bones displace every joint below them
    offset = np.zeros_like(pose)
    rho = noise.jitter_correlation
    mix = np.sqrt(1.0 - rho * rho)
    parents = tree.parents
    for j in tree.order:
        p = parents[j]
        if p < 0:
            continue
        offset[:, j] = offset[:, p] + scale[:, j, None] * (pose[:, j] - pose[:, p])
        jitter[:, j] = rho * jitter[:, p] + mix * jitter[:, j]

    out = pose + offset + jitter
    out[:, limb] += np.where(occluded[..., None], spikes, 0.0)
    return out[0] if single else out


def true_imu_rotations(gt_params, rest, tree, sensors=None):
    """Global bone rotations ``G_j * q_j^g`` that noise-free sensors would report after calibration."""
    sensors = tuple(tree.sensors if sensors is None else sensors)
    joints = [tree.sensor_joint[k] for k in sensors]
    G = kl.fk_global_rotations(gt_params, rest, tree)
    return qk.quat_mul(G[..., joints, :], rest.frames[joints])


def drift_walk(n_frames, n_sensors, drift_rate, rng):
    """Per-sensor orientation random walks, identity at frame 0; shape (N, K, 4)."""
    steps = rng.standard_normal((n_frames, n_sensors, 3)) * drift_rate
    steps[0] = 0.0
    inc = qk.rotvec_to_quat(steps)
    walk = np.empty((n_frames, n_sensors, 4))
    walk[0] = qk.IDENTITY
    for t in range(1, n_frames):
        walk[t] = qk.quat_mul(inc[t], walk[t - 1])
    return walk


def simulate_imu(gt_params, rest, tree, cal, drift_rate, rng, sensors=None):
    """Raw sensor quaternions (N, K, 4) that :func:`kinefuse.imu.calibrate` maps back to truth.

    ``q_k = W_t * (q_kg)^-1 * q_kb * q_k^imu`` with ``W_t`` the drift walk.
    """
    sensors = tuple(tree.sensors if sensors is None else sensors)
    missing = [k for k in sensors if k not in cal]
    if missing:
        raise CalibrationError(f"calibration missing sensors {missing}")
    truth = true_imu_rotations(gt_params, rest, tree, sensors)
    single = truth.ndim == 2
    truth = truth[None] if single else truth
    pre = np.stack([qk.quat_mul(qk.quat_inv(cal[k][1]), cal[k][0]) for k in sensors])
    raw = qk.quat_mul(pre, truth)
    walk = drift_walk(raw.shape[0], len(sensors), drift_rate, rng)
    raw = qk.quat_mul(walk, raw)
    return raw[0] if single else raw


# ---------------------------------------------------------------------------
# datasets

@dataclass
class FrameRecord:
    frame: int
    gt_params: kl.PoseParams
    gt_pose: np.ndarray
    vis_pose: np.ndarray
    imu_samples: list


@dataclass
class SequenceDataset:
    """One sequence stored column-wise; ``frame(i)`` gives a :class:`FrameRecord`."""

    tree: sk.KinematicTree
    rest: sk.RestPose
    calibration: imu_mod.CalibrationSet
    sensors: tuple
    gt_T: np.ndarray
    gt_q: np.ndarray
    gt_pose: np.ndarray
    vis_pose: np.ndarray
    imu_raw: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return self.gt_pose.shape[0]

    def frame(self, i):
        samples = [imu_mod.ImuSample(k, self.imu_raw[i, c]) for c, k in enumerate(self.sensors)]
        return FrameRecord(i, kl.PoseParams(self.gt_T[i], self.gt_q[i]), self.gt_pose[i],
                           self.vis_pose[i], samples)

    def __iter__(self):
        return (self.frame(i) for i in range(len(self)))

    @property
    def gt_params(self):
        return kl.PoseParams(self.gt_T, self.gt_q)

    def aligned_imu(self, sensors=None):
        aligned = imu_mod.align(self.imu_raw, self.calibration, self.rest, self.tree, self.sensors)
        return aligned if sensors is None else aligned.subset(tuple(sensors))

    def with_estimate(self, pose, note):
        """Copy with ``vis_pose`` replaced by another estimate (e.g. a fused pose)."""
        prov = dict(self.provenance)
        prov["estimate"] = note
        return SequenceDataset(self.tree, self.rest, self.calibration, self.sensors, self.gt_T,
                               self.gt_q, self.gt_pose, np.asarray(pose, dtype=float), self.imu_raw, prov)

    def slice(self, start, stop):
        return SequenceDataset(self.tree, self.rest, self.calibration, self.sensors,
                               self.gt_T[start:stop], self.gt_q[start:stop], self.gt_pose[start:stop],
                               self.vis_pose[start:stop], self.imu_raw[start:stop], dict(self.provenance))


def generate_sequence(tree, rest, n_frames, noise=None, motion=None, seed=None, random_calibration=True):
    """Full synthetic sequence: GT motion, noisy vision, drifting raw IMUs.

    ``seed`` defaults to ``noise.seed``; the provenance records the one used.
    """
    noise = noise or NoiseConfig()
    seed = noise.seed if seed is None else int(seed)
    noise = replace(noise, seed=seed)
    motion = motion or MotionConfig()
    cal_rng, motion_rng, vision_rng, imu_rng = (np.random.default_rng(s)
                                               for s in np.random.SeedSequence(seed).spawn(4))
    sensors = tree.sensors
    if random_calibration:
        cal = imu_mod.CalibrationSet.random(sensors, cal_rng)
    else:
        cal = imu_mod.CalibrationSet.identity(sensors)
    params = generate_motion(tree, rest, n_frames, config=motion, rng=motion_rng)
    gt_pose = kl.fk(params, rest, tree)
    vis = simulate_vision(gt_pose, tree, noise, vision_rng)
    raw = simulate_imu(params, rest, tree, cal, noise.imu_drift_rate, imu_rng, sensors)
    provenance = {
        "generator": f"kinefuse {__version__}",
        "rng": RNG_NAME,
        "seed": int(seed),
        "n_frames": int(n_frames),
        "noise": asdict(noise),
        "motion": asdict(motion),
        "random_calibration": bool(random_calibration),
    }
    return SequenceDataset(tree, rest, cal, sensors, params.root_translation, params.rotations,
                           gt_pose, vis, raw, provenance)


def _line(obj):
    return json.dumps(obj, separators=(",", ":"), allow_nan=False) + "\n"


def write_dataset(ds, path):
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "skeleton": sk.skeleton_to_dict(ds.tree, ds.rest),
        "calibration": ds.calibration.to_dict(),
        "sensors": [int(k) for k in ds.sensors],
        "provenance": ds.provenance,
        "n_frames": len(ds),
    }
    digest = hashlib.sha256()
    lines = [_line(header)]
    for i in range(len(ds)):
        lines.append(_line({
            "frame": i,
            "gt_T": ds.gt_T[i].tolist(),
            "gt_q": ds.gt_q[i].tolist(),
            "gt_pose": ds.gt_pose[i].tolist(),
            "vis_pose": ds.vis_pose[i].tolist(),
            "imu": ds.imu_raw[i].tolist(),
        }))
    for line in lines:
        digest.update(line.encode())
    lines.append(_line({"end": True, "n_frames": len(ds), "sha256": digest.hexdigest()}))
    Path(path).write_text("".join(lines))


def read_dataset(path):
    """Read a dataset file; raises distinct errors for bad structure, version and checksum."""
    text = Path(path).read_text()
    lines = text.splitlines(keepends=True)
    if not lines:
        raise MalformedFileError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise MalformedFileError(f"{path}: header is not JSON ({exc})") from exc
    if not isinstance(header, dict) or header.get("format") != DATASET_FORMAT:
        raise MalformedFileError(f"{path}: not a {DATASET_FORMAT} file")
    if header.get("version") != DATASET_VERSION:
        raise VersionMismatchError(
            f"{path}: dataset version {header.get('version')!r}, this reader supports {DATASET_VERSION}")
    if not lines[-1].endswith("\n"):
        raise MalformedFileError(f"{path}: truncated (no final newline)")
    try:
        trailer = json.loads(lines[-1])
    except json.JSONDecodeError as exc:
        raise MalformedFileError(f"{path}: truncated or corrupt trailer") from exc
    if not isinstance(trailer, dict) or trailer.get("end") is not True:
        raise MalformedFileError(f"{path}: missing trailer record (file truncated?)")
    body = lines[:-1]
    n = header.get("n_frames")
    if trailer.get("n_frames") != n or len(body) - 1 != n:
        raise MalformedFileError(f"{path}: expected {n} frames, found {len(body) - 1}")
    digest = hashlib.sha256("".join(body).encode()).hexdigest()
    if digest != trailer.get("sha256"):
        raise ChecksumError(f"{path}: checksum mismatch")

    try:
        tree, rest = sk.skeleton_from_dict(header["skeleton"])
        cal = imu_mod.CalibrationSet.from_dict(header["calibration"])
        sensors = tuple(int(k) for k in header["sensors"])
        frames = [json.loads(line) for line in body[1:]]
        if [f["frame"] for f in frames] != list(range(n)):
            raise MalformedFileError(f"{path}: frame indices out of order")
        J, K = tree.joint_count, len(sensors)

        def column(key, shape):
            arr = np.array([f[key] for f in frames], dtype=float).reshape((n,) + shape)
            return arr

        ds = SequenceDataset(tree, rest, cal, sensors,
                             column("gt_T", (3,)), column("gt_q", (J, 4)), column("gt_pose", (J, 3)),
                             column("vis_pose", (J, 3)), column("imu", (K, 4)), header.get("provenance", {}))
    except (KeyError, TypeError, ValueError, ConfigError) as exc:
        raise MalformedFileError(f"{path}: malformed record ({exc})") from exc
    return ds

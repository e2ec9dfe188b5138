"""IMU calibration and alignment with the skeleton.

Raw sensor orientations ``q_k`` become bone rotations in three steps:

* :func:`calibrate`: ``q_k^imu = (q_kb)^-1 * q_kg * q_k``, the global rotation
  of the bone relative to the T-pose.
* :func:`to_local`: ``qbar_k = q_k^imu * (q_j^g)^-1``, the total rotation FK
  would apply to the local rest bone ``b_j^j``.
* :func:`to_bone_vector`: ``b_k^imu = qbar_k . b_j^j``.

``qbar_k . b_j^j == q_k^imu . b_j^rest`` for any rest frames, so applying the
global rotation to the global T-pose bone and applying ``qbar`` to the local
bone give the same vector.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import quatkin as qk
from .errors import CalibrationError, ConfigError, ShapeError

CALIBRATION_FORMAT = "kinefuse-calibration"
CALIBRATION_VERSION = 1


def _stored_quat(values):
    """Quaternion read from a file: kept bit-exact when already unit, else normalised."""
    q = np.asarray(values, dtype=float)
    if q.shape != (4,):
        raise ValueError(f"quaternion must have 4 components, got {q.shape}")
    return q if abs(np.linalg.norm(q) - 1.0) <= 1e-12 else qk.quat_normalize(q)


@dataclass(frozen=True)
class ImuSample:
    sensor: int
    q: np.ndarray


@dataclass
class CalibrationSet:
    """Per-sensor ``(q_kb, q_kg)``: IMU-to-bone and IMU-reference-to-global offsets."""

    offsets: dict = field(default_factory=dict)

    def __getitem__(self, sensor):
        try:
            return self.offsets[sensor]
        except KeyError:
            raise CalibrationError(f"no calibration for sensor {sensor}") from None

    def __contains__(self, sensor):
        return sensor in self.offsets

    @property
    def sensors(self):
        return tuple(sorted(self.offsets))

    @classmethod
    def identity(cls, sensors):
        return cls({int(k): (qk.IDENTITY.copy(), qk.IDENTITY.copy()) for k in sensors})

    @classmethod
    def random(cls, sensors, rng):
        return cls({int(k): (qk.random_quaternions(rng), qk.random_quaternions(rng)) for k in sensors})

    def covers(self, sensors):
        missing = [k for k in sensors if k not in self.offsets]
        if missing:
            raise CalibrationError(f"calibration missing sensors {missing}")

    def to_dict(self):
        return {
            "format": CALIBRATION_FORMAT,
            "version": CALIBRATION_VERSION,
            "convention": "wxyz Hamilton; q_imu = inv(q_kb) * q_kg * q_raw",
            "sensors": [
                {"sensor": k, "q_kb": [float(v) for v in kb], "q_kg": [float(v) for v in kg]}
                for k, (kb, kg) in sorted(self.offsets.items())
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != CALIBRATION_FORMAT:
            raise ConfigError(f"not a calibration document (format={doc.get('format')!r})")
        if doc.get("version") != CALIBRATION_VERSION:
            raise ConfigError(f"unsupported calibration version {doc.get('version')!r}")
        try:
            return cls({int(e["sensor"]): (_stored_quat(e["q_kb"]), _stored_quat(e["q_kg"]))
                        for e in doc["sensors"]})
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed calibration document: {exc}") from exc


def save_calibration(cal, path):
    Path(path).write_text(json.dumps(cal.to_dict(), indent=2) + "\n")


def load_calibration(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"calibration file is not valid JSON: {exc}") from exc
    return CalibrationSet.from_dict(doc)


def calibrate(sample, cal):
    """Global bone rotation ``(q_kb)^-1 * q_kg * q_k`` for one sample."""
    q_kb, q_kg = cal[sample.sensor]
    return qk.quat_mul(qk.quat_mul(qk.quat_inv(q_kb), q_kg), sample.q)


def calibrate_batch(raw, cal, sensors):
    """Calibrate ``raw`` (..., K, 4) whose K columns follow ``sensors``."""
    raw = np.asarray(raw, dtype=float)
    if raw.shape[-2:] != (len(sensors), 4):
        raise ShapeError(f"raw IMU array must end in ({len(sensors)}, 4), got {raw.shape}")
    cal.covers(sensors)
    pre = np.stack([qk.quat_mul(qk.quat_inv(cal[k][0]), cal[k][1]) for k in sensors])
    return qk.quat_mul(pre, raw)


def to_local(q_global, rest, j):
    """``q_global * (q_j^g)^-1``."""
    return qk.quat_mul(q_global, qk.quat_inv(rest.frames[j]))


def to_bone_vector(q_local, rest, j):
    """Rest bone of joint ``j`` rotated by ``q_local`` (mm, global frame)."""
    return qk.quat_rotate_vec(q_local, rest.bones_local[j])


@dataclass
class AlignedImu:
    """Calibrated sensor data for a batch of frames.

    Column ``i`` of every array belongs to ``sensors[i]`` mounted on the bone
    ending at ``joints[i]``.
    """

    sensors: tuple
    joints: tuple
    q_global: np.ndarray
    q_local: np.ndarray
    bones: np.ndarray

    def subset(self, sensors):
        unknown = [k for k in sensors if k not in self.sensors]
        if unknown:
            raise CalibrationError(f"unknown sensors {unknown}")
        cols = [self.sensors.index(k) for k in sensors]
        return AlignedImu(tuple(sensors), tuple(self.joints[c] for c in cols),
                          self.q_global[..., cols, :], self.q_local[..., cols, :], self.bones[..., cols, :])

    def frames(self, index):
        return AlignedImu(self.sensors, self.joints, self.q_global[index], self.q_local[index], self.bones[index])


def align(raw, cal, rest, tree, sensors=None):
    """Calibrate raw orientations (..., K, 4) and express them on the skeleton."""
    sensors = tuple(tree.sensors if sensors is None else sensors)
    sensor_joint = tree.sensor_joint
    unknown = [k for k in sensors if k not in sensor_joint]
    if unknown:
        raise CalibrationError(f"sensors {unknown} are not mounted on this skeleton")
    joints = tuple(sensor_joint[k] for k in sensors)
    q_global = calibrate_batch(raw, cal, sensors)
    frame_inv = qk.quat_inv(rest.frames[list(joints)])
    q_local = qk.quat_mul(q_global, frame_inv)
    bones = qk.quat_rotate_vec(q_local, rest.bones_local[list(joints)])
    return AlignedImu(sensors, joints, q_global, q_local, bones)

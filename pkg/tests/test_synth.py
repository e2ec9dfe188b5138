import json
from dataclasses import replace

import numpy as np
import pytest

from kinefuse import kinelayers as kl
from kinefuse import quatkin as qk
from kinefuse import skeleton as sk
from kinefuse import synth
from kinefuse.errors import ChecksumError, ConfigError, MalformedFileError, VersionMismatchError
from kinefuse.synth import MotionConfig, NoiseConfig


def only(**kwargs):
    return replace(NoiseConfig.zero(), **kwargs)


def test_same_seed_same_data(tree, rest):
    a = synth.generate_sequence(tree, rest, 50, seed=3)
    b = synth.generate_sequence(tree, rest, 50, seed=3)
    c = synth.generate_sequence(tree, rest, 50, seed=4)
    for name in ("gt_T", "gt_q", "gt_pose", "vis_pose", "imu_raw"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.vis_pose, c.vis_pose)
    assert a.provenance == b.provenance and a.provenance["seed"] == 3


def test_seed_defaults_to_noise_seed(tree, rest):
    a = synth.generate_sequence(tree, rest, 10, noise=NoiseConfig(seed=9))
    b = synth.generate_sequence(tree, rest, 10, seed=9)
    np.testing.assert_array_equal(a.vis_pose, b.vis_pose)
    assert a.provenance["noise"]["seed"] == 9


def test_zero_noise_is_exact(clean_ds):
    np.testing.assert_array_equal(clean_ds.vis_pose, clean_ds.gt_pose)
    truth = synth.true_imu_rotations(clean_ds.gt_params, clean_ds.rest, clean_ds.tree)
    got = clean_ds.aligned_imu().q_global
    assert np.max(np.minimum(np.abs(got - truth), np.abs(got + truth)).max(axis=-1)) <= 1e-9


def test_gt_pose_is_fk_of_gt_params(small_ds):
    np.testing.assert_array_equal(small_ds.gt_pose, kl.fk(small_ds.gt_params, small_ds.rest, small_ds.tree))


def test_jitter_marginal_and_correlation(tree, rest):
    rng = np.random.default_rng(0)
    gt = np.repeat(rest.positions[None], 20000, axis=0)
    noisy = synth.simulate_vision(gt, tree, only(vision_jitter_sigma=15.0, jitter_correlation=0.6), rng)
    err = noisy - gt
    std = err.std(axis=0)
    assert np.all(np.abs(std / 15.0 - 1.0) < 0.05)
    knee, hip = tree.index("RKnee"), tree.index("RHip")
    corr = np.corrcoef(err[:, knee, 0], err[:, hip, 0])[0, 1]
    assert corr == pytest.approx(0.6, abs=0.03)


def test_occlusion_only_hits_limb_ends(tree, rest):
    rng = np.random.default_rng(1)
    gt = np.repeat(rest.positions[None], 5000, axis=0)
    noisy = synth.simulate_vision(gt, tree, only(occlusion_prob=0.3, occlusion_sigma=80.0), rng)
    moved = np.any(noisy != gt, axis=-1)
    limbs = list(synth.vision_noise_joints(tree))
    others = [j for j in range(tree.joint_count) if j not in limbs]
    assert not moved[:, others].any()
    assert moved[:, limbs].mean() == pytest.approx(0.3, abs=0.02)
    spikes = (noisy - gt)[:, limbs][moved[:, limbs]]
    assert spikes.std() == pytest.approx(80.0, rel=0.05)


def test_bone_scale_stretches_bones(tree, rest):
    rng = np.random.default_rng(2)
    gt = np.repeat(rest.positions[None], 5000, axis=0)
    noisy = synth.simulate_vision(gt, tree, only(bone_scale_sigma=0.03), rng)
    ratio = sk.bone_lengths(noisy, tree)[:, list(tree.nonroot)] / rest.lengths[list(tree.nonroot)]
    assert ratio.std() == pytest.approx(0.03, rel=0.05)
    assert ratio.mean() == pytest.approx(1.0, abs=1e-3)


def test_drift_walk_statistics():
    rng = np.random.default_rng(3)
    walk = synth.drift_walk(400, 300, 0.002, rng)
    np.testing.assert_array_equal(walk[0], np.tile(qk.IDENTITY, (300, 1)))
    angle2 = np.sum(qk.quat_to_rotvec(walk[-1]) ** 2, axis=-1)
    # a random walk with per-axis step sigma: E|angle|^2 = 3 sigma^2 t
    assert angle2.mean() == pytest.approx(3 * 0.002 ** 2 * 399, rel=0.15)


def test_motion_steps_are_bounded(tree, rest):
    cfg = MotionConfig()
    params = synth.generate_motion(tree, rest, 300, seed=5, config=cfg)
    q = params.rotations
    rel = qk.quat_mul(q[1:], qk.quat_inv(q[:-1]))
    angles = np.linalg.norm(qk.quat_to_rotvec(rel), axis=-1)
    assert angles.max() <= cfg.max_step + 1e-12
    assert angles.max() > 0
    np.testing.assert_array_equal(q[:, tree.root], np.tile(qk.IDENTITY, (300, 1)))


def test_noise_config_validation():
    with pytest.raises(ConfigError):
        NoiseConfig(occlusion_prob=1.5)
    with pytest.raises(ConfigError):
        NoiseConfig(vision_jitter_sigma=-1.0)
    with pytest.raises(ConfigError):
        NoiseConfig(jitter_correlation=1.0)
    with pytest.raises(ValueError):
        synth.generate_motion(sk.load_skeleton()[0], sk.load_skeleton()[1], 0)


def test_dataset_views(small_ds):
    rec = small_ds.frame(4)
    assert rec.frame == 4 and len(rec.imu_samples) == 8
    np.testing.assert_array_equal(rec.vis_pose, small_ds.vis_pose[4])
    part = small_ds.slice(10, 20)
    assert len(part) == 10
    est = small_ds.with_estimate(small_ds.gt_pose, {"method": "oracle"})
    assert est.provenance["estimate"] == {"method": "oracle"}
    assert "estimate" not in small_ds.provenance
    assert sum(1 for _ in small_ds.slice(0, 3)) == 3


def test_dataset_roundtrip_is_bit_exact(small_ds, tmp_path):
    path = tmp_path / "d.jsonl"
    synth.write_dataset(small_ds, path)
    back = synth.read_dataset(path)
    for name in ("gt_T", "gt_q", "gt_pose", "vis_pose", "imu_raw"):
        np.testing.assert_array_equal(getattr(back, name), getattr(small_ds, name))
    assert back.provenance == json.loads(json.dumps(small_ds.provenance))
    path2 = tmp_path / "d2.jsonl"
    synth.write_dataset(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_dataset_errors(small_ds, tmp_path):
    path = tmp_path / "d.jsonl"
    synth.write_dataset(small_ds.slice(0, 5), path)
    lines = path.read_text().splitlines(keepends=True)

    (tmp_path / "trunc.jsonl").write_text("".join(lines[:-2]))
    with pytest.raises(MalformedFileError):
        synth.read_dataset(tmp_path / "trunc.jsonl")

    (tmp_path / "cut.jsonl").write_text("".join(lines)[:-40])
    with pytest.raises(MalformedFileError):
        synth.read_dataset(tmp_path / "cut.jsonl")

    header = json.loads(lines[0])
    header["version"] = 99
    (tmp_path / "ver.jsonl").write_text(json.dumps(header) + "\n" + "".join(lines[1:]))
    with pytest.raises(VersionMismatchError):
        synth.read_dataset(tmp_path / "ver.jsonl")

    frame = json.loads(lines[2])
    frame["vis_pose"][0][0] += 1.0
    tampered = lines[:2] + [json.dumps(frame, separators=(",", ":")) + "\n"] + lines[3:]
    (tmp_path / "sum.jsonl").write_text("".join(tampered))
    with pytest.raises(ChecksumError):
        synth.read_dataset(tmp_path / "sum.jsonl")

    (tmp_path / "empty.jsonl").write_text("")
    with pytest.raises(MalformedFileError):
        synth.read_dataset(tmp_path / "empty.jsonl")
    (tmp_path / "other.jsonl").write_text('{"format": "something"}\n')
    with pytest.raises(MalformedFileError):
        synth.read_dataset(tmp_path / "other.jsonl")

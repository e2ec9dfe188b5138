import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinefuse import kinelayers as kl
from kinefuse import metrics
from kinefuse.errors import CalibrationError, ShapeError


def brute_force(pred, gt):
    total, count = 0.0, 0
    for n in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            d = pred[n, j] - gt[n, j]
            total += math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
            count += 1
    return total / count


def test_identical_poses_give_zero(small_ds):
    rep = metrics.mpjpe(small_ds.gt_pose, small_ds.gt_pose, small_ds.tree)
    assert rep.mpjpe == rep.imu_related == rep.others == 0.0
    assert all(v == 0.0 for v in rep.per_joint.values())


def test_uniform_offset_gives_exact_error(small_ds):
    rep = metrics.mpjpe(small_ds.gt_pose + [3.0, 0.0, 0.0], small_ds.gt_pose, small_ds.tree)
    assert rep.mpjpe == 3.0 and rep.imu_related == 3.0 and rep.others == 3.0


def test_two_frame_hand_computation(tree):
    gt = np.zeros((2, tree.joint_count, 3))
    pred = gt.copy()
    pred[0, 0] = [3.0, 4.0, 0.0]
    pred[1, 5] = [0.0, 0.0, 2.0]
    rep = metrics.mpjpe(pred, gt, tree)
    assert rep.mpjpe == pytest.approx(7.0 / 32)
    assert rep.per_joint["Pelvis"] == 2.5
    assert rep.per_joint["LKnee"] == 1.0
    assert rep.imu_related == pytest.approx(2.0 / 16)
    assert rep.others == pytest.approx(5.0 / 16)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_matches_brute_force_bit_for_bit(n, seed):
    from kinefuse import skeleton as sk
    tree, _ = sk.load_skeleton()
    rng = np.random.default_rng(seed)
    pred = rng.normal(0, 50, (n, tree.joint_count, 3))
    gt = rng.normal(0, 50, (n, tree.joint_count, 3))
    assert metrics.mpjpe(pred, gt, tree).mpjpe == brute_force(pred, gt)


def test_split_partitions_joints(small_ds):
    rep = metrics.mpjpe(small_ds.vis_pose, small_ds.gt_pose, small_ds.tree)
    names = set(rep.imu_related_joints) | set(rep.other_joints)
    assert names == set(small_ds.tree.names)
    assert not set(rep.imu_related_joints) & set(rep.other_joints)
    assert set(rep.imu_related_joints) == {"RKnee", "RAnkle", "LKnee", "LAnkle", "LElbow", "LWrist",
                                           "RElbow", "RWrist"}
    doc = rep.to_dict()
    assert doc["format"] == metrics.REPORT_FORMAT and doc["version"] == 1 and doc["units"] == "mm"


def test_mismatched_inputs(small_ds):
    with pytest.raises(ShapeError):
        metrics.mpjpe(small_ds.gt_pose[:5], small_ds.gt_pose[:4], small_ds.tree)
    with pytest.raises(ShapeError):
        metrics.mpjpe(small_ds.gt_pose[:, :5], small_ds.gt_pose[:, :5], small_ds.tree)


def test_theta_sweep_endpoints(small_ds):
    base = metrics.mpjpe(small_ds.vis_pose, small_ds.gt_pose, small_ds.tree)
    naive = metrics.sweep_theta([small_ds], "naive")
    assert [r["theta"] for r in naive["rows"]] == list(metrics.DEFAULT_THETA_GRID) + [math.inf]
    assert naive["rows"][-1]["mpjpe"] == base.mpjpe and naive["rows"][-1]["replaced"] == 0
    counts = [r["replaced"] for r in naive["rows"]]
    assert counts == sorted(counts, reverse=True)
    assert naive["best"]["mpjpe"] == min(r["mpjpe"] for r in naive["rows"][:-1])

    kine = metrics.sweep_theta([small_ds], "kine")
    T, q = kl.ik_batch(small_ds.vis_pose, small_ds.rest, small_ds.tree)
    fkik = metrics.mpjpe(kl.fk_batch(T, q, small_ds.rest, small_ds.tree), small_ds.gt_pose, small_ds.tree)
    assert kine["rows"][-1]["mpjpe"] == fkik.mpjpe
    with pytest.raises(ValueError):
        metrics.sweep_theta([small_ds], "naive", grid=())


def test_theta_sweep_inf_in_grid_not_repeated(small_ds):
    out = metrics.sweep_theta([small_ds], "kine", grid=(0.25, math.inf))
    assert [r["theta"] for r in out["rows"]] == [0.25, math.inf]
    assert out["best"]["theta"] == 0.25


def test_imu_subset_endpoints(small_ds):
    out = metrics.sweep_imu_subsets([small_ds])
    rows = {r["subset"]: r for r in out["rows"]}
    assert set(rows) == {"none", "upper", "lower", "limbs"}
    T, q = kl.ik_batch(small_ds.vis_pose, small_ds.rest, small_ds.tree)
    fkik = metrics.mpjpe(kl.fk_batch(T, q, small_ds.rest, small_ds.tree), small_ds.gt_pose, small_ds.tree)
    assert rows["none"]["mpjpe"] == fkik.mpjpe
    pose, _ = metrics.fuse_dataset(small_ds, "kine", 0.25)
    assert rows["limbs"]["mpjpe"] == metrics.mpjpe(pose, small_ds.gt_pose, small_ds.tree).mpjpe
    with pytest.raises(CalibrationError):
        metrics.sweep_imu_subsets([small_ds], {"bad": (1, 99)})


def test_fuse_dataset_methods(small_ds):
    pose, replaced = metrics.fuse_dataset(small_ds, "none", 0.25)
    np.testing.assert_array_equal(pose, small_ds.vis_pose)
    assert replaced is None
    with pytest.raises(ValueError):
        metrics.fuse_dataset(small_ds, "ada", 0.25)
    with pytest.raises(ValueError):
        metrics.fuse_dataset(small_ds, "magic", 0.25)


def test_format_table():
    text = metrics.format_table(["a", "bb"], [[1.0, math.inf], ["x", [1, 2]], ["y", []]])
    lines = text.splitlines()
    assert lines[0] == "   a   bb"
    assert lines[1] == "----  ---"
    assert lines[2] == "1.00  inf"
    assert lines[3] == "   x  1,2"
    assert lines[4] == "   y    -"

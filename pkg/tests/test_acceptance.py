"""Acceptance criteria, one test each. Every test records a PASS/FAIL line with
the measured value and its tolerance; the lines are printed in the terminal
summary of any pytest run that includes this file."""
import filecmp
import json
import time

import numpy as np
import pytest

from kinefuse import checks, cli
from kinefuse import config as cfgmod
from kinefuse import kinelayers as kl
from kinefuse import metrics
from kinefuse import skeleton as sk
from kinefuse.fusion import ada, kine_fuse, naive_fuse
from kinefuse.synth import generate_sequence

RESULTS = []


def record(number, passed, text):
    RESULTS.append(f"[criterion {number}] {'PASS' if passed else 'FAIL'}: {text}")
    return passed


@pytest.fixture(scope="module")
def shipped():
    cfg = cfgmod.load_config()
    tree, rest = cfg.load_skeleton()

    def gen(seed, n=None):
        return generate_sequence(tree, rest, n or cfg.data.n_frames, noise=cfg.noise, motion=cfg.motion,
                                 seed=seed, random_calibration=cfg.data.random_calibration)

    return cfg, tree, rest, gen


def test_1_kinematic_exactness(shipped):
    _, tree, rest, _ = shipped
    r = checks.roundtrip_suite(tree, rest, seed=0, n=1000)
    ok = r["passed"] and r["seconds"] < 10.0
    assert record(1, ok, f"rest {r['rest_error_mm']:.1e} mm (tol 1e-9), lengths {r['bone_length_rel_error']:.1e} "
                         f"rel (tol 1e-9), fk(ik) {r['roundtrip_error_mm']:.1e} mm (tol 1e-6) over 1000 poses, "
                         f"{r['seconds']:.2f} s (limit 10 s)")


def test_2_gradients(shipped):
    _, tree, rest, _ = shipped
    r = checks.gradcheck_suite(tree, rest, seed=0, n=100)
    ok = r["passed"] and r["seconds"] < 30.0
    assert record(2, ok, f"fk {r['fk_max_rel_error']:.1e} (tol 1e-5), loss {r['loss_max_rel_error']:.1e} "
                         f"(tol 1e-4) over 100 configurations, {r['seconds']:.2f} s (limit 30 s)")


def test_3_rotation_algebra():
    r = checks.rotation_suite(seed=0, n=100_000)
    assert record(3, r["passed"], f"Rodrigues vs quaternion {r['rodrigues_error']:.1e} (tol 1e-12) over 1e5, "
                                  f"round trips {r['conversion_error']:.1e} (tol 1e-10) incl. half turns")


def test_4_oracle_pipeline(shipped):
    _, tree, rest, _ = shipped
    r = checks.oracle_suite(tree, rest, seed=0, n_frames=500)
    assert record(4, r["passed"], f"calibration {r['calibration_error']:.1e}, KineFuse theta 0 limb directions "
                                  f"{r['direction_error']:.1e} (tol 1e-9), random calibration offsets")


def test_5_structural_properties(shipped):
    cfg, tree, rest, gen = shipped
    ds = gen(cfg.data.test_seeds[0])
    aligned = ds.aligned_imu()

    out, replaced = naive_fuse(ds.vis_pose, aligned, tree, rest, cfg.fusion.theta_t, return_replaced=True)
    # a joint can change only if it lies in the subtree of some replaced bone
    member = np.zeros((len(aligned.joints), tree.joint_count), dtype=bool)
    for c, j in enumerate(aligned.joints):
        member[c, list(tree.subtree(j))] = True
    affected = (replaced.astype(int) @ member.astype(int)) > 0
    upstream_ok = bool(replaced.any()) and np.array_equal(out[~affected], ds.vis_pose[~affected])

    naive_inf = naive_fuse(ds.vis_pose, aligned, tree, rest, np.inf)
    _, kine_inf = kine_fuse(ds.vis_pose, aligned, rest, tree, np.inf)
    T, q = kl.ik_batch(ds.vis_pose, rest, tree)
    inf_ok = np.array_equal(naive_inf, ds.vis_pose) and np.array_equal(kine_inf, kl.fk_batch(T, q, rest, tree))

    rng = np.random.default_rng(0)
    wild = ds.vis_pose + rng.normal(0.0, 500.0, ds.vis_pose.shape)
    _, fused = kine_fuse(wild, aligned, rest, tree, cfg.fusion.theta_t)
    lengths = sk.bone_lengths(fused, tree)[:, list(tree.nonroot)]
    len_err = float(np.max(np.abs(lengths / rest.lengths[list(tree.nonroot)] - 1.0)))
    ok = upstream_ok and inf_ok and len_err <= 1e-9
    assert record(5, ok, f"NaiveFuse upstream joints bit-identical: {upstream_ok}; theta inf identity / fk(ik) "
                         f"exact: {inf_ok}; KineFuse bone lengths on 500 mm corrupted input {len_err:.1e} rel")


@pytest.fixture(scope="module")
def trend(shipped):
    cfg, tree, rest, gen = shipped
    train = [gen(s) for s in cfg.data.train_seeds]
    test = [gen(s) for s in cfg.data.test_seeds]
    start = time.perf_counter()
    model, _ = ada.train_ada(train, tree, rest, cfg.fusion)
    seconds = time.perf_counter() - start
    gt = np.concatenate([d.gt_pose for d in test])
    reports = {}
    for method in ("none", "naive", "kine", "ada"):
        pose = np.concatenate([metrics.fuse_dataset(d, method, cfg.fusion.theta_t, model=model)[0] for d in test])
        reports[method] = metrics.mpjpe(pose, gt, tree)
    return reports, seconds


def test_6_trend_reproduction(trend):
    r, seconds = trend
    base, naive, kine, adf = (r[m] for m in ("none", "naive", "kine", "ada"))
    related_drop = 1.0 - kine.imu_related / base.imu_related
    ok = (base.mpjpe > naive.mpjpe > kine.mpjpe and adf.mpjpe <= kine.mpjpe and related_drop >= 0.15
          and kine.others < base.others and seconds <= 300.0)
    assert record(6, ok, f"MPJPE baseline {base.mpjpe:.2f} > NaiveFuse {naive.mpjpe:.2f} > KineFuse {kine.mpjpe:.2f} "
                         f">= AdaDeepFuse {adf.mpjpe:.2f} mm; IMU-related {base.imu_related:.2f} -> "
                         f"{kine.imu_related:.2f} ({100 * related_drop:.1f}% drop, need 15%); Others "
                         f"{base.others:.2f} -> {kine.others:.2f}; training {seconds:.1f} s (limit 300 s)")


def test_7_overfit_capacity(shipped):
    cfg, tree, rest, gen = shipped
    ds = gen(cfg.data.train_seeds[0], n=32)
    data = ada.prepare_sequences([ds])
    # the MLP outputs rotations only, so the root translation is taken from ground truth
    data["T"] = ds.gt_T.copy()
    fc = ada.FusionConfig(architecture="flat", residual=False, epochs=200, batch_size=8, lr_schedule="cosine")
    _, history = ada.train_ada(data, tree, rest, fc)
    final = history[-1]["train_mpjpe"]
    assert record(7, final < 5.0, f"32 frames, 200 epochs: training MPJPE {history[0]['train_mpjpe']:.2f} -> "
                                  f"{final:.2f} mm (need < 5 mm)")


def _run_all(out, config_path):
    base = ["--config", str(config_path)]
    ds, fused, model = out / "ds.jsonl", out / "fused.jsonl", out / "model.json"
    commands = [
        ["synth", *base, str(ds), "--seed", "101"],
        ["synth", *base, "--all", str(out / "all")],
        ["fuse", *base, "--method", "kine", "--theta", "0.25", str(ds), str(fused)],
        ["fuse", *base, "--method", "naive", str(ds), str(out / "naive.jsonl")],
        ["train", *base, "--out", str(model), "--report", str(out / "train.json")],
        ["fuse", *base, "--method", "ada", "--model", str(model), str(ds), str(out / "ada.jsonl")],
        ["eval", *base, str(fused), "--report", str(out / "eval.json")],
        ["sweep-theta", *base, "--report", str(out / "theta.json")],
        ["sweep-imus", *base, "--report", str(out / "imus.json")],
        ["gradcheck", *base, "--seed", "7", "--n", "10", "--report", str(out / "grad.json")],
        ["roundtrip", *base, "--seed", "7", "--report", str(out / "trip.json")],
    ]
    return [cli.main(c) for c in commands]


def test_8_cli_determinism(tmp_path, capsys):
    cfg = cfgmod.apply_overrides(cfgmod.load_config(), {"data.n_frames": 200, "fusion.epochs": 2})
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(cfg.to_dict()))
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    codes = _run_all(a, config_path) + _run_all(b, config_path)
    capsys.readouterr()
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    same = [filecmp.cmp(a / f, b / f, shallow=False) for f in files]
    ok = all(c == 0 for c in codes) and all(same) and len(files) >= 14
    assert record(8, ok, f"{sum(same)}/{len(files)} artifacts byte-identical across two runs of 11 commands, "
                         f"exit codes {sorted(set(codes))}")

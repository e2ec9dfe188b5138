"""Pose error metrics, threshold sweeps and IMU-subset ablations.

All sums run frame-major, then joint, one term at a time, so a report is
bit-identical to a plain double loop over the same distances.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import kinelayers as kl
from . import skeleton as sk
from .errors import CalibrationError, ShapeError
from .fusion import kine_fuse, naive_fuse

REPORT_FORMAT = "kinefuse-metrics"
REPORT_VERSION = 1
DEFAULT_THETA_GRID = (0.15, 0.20, 0.25, 0.30, 0.35)
SPLIT_DEFINITION = {
    "imu_related": "joints at the end of a sensor-carrying bone (knees, ankles, elbows, wrists)",
    "others": "every remaining joint, root included",
}


@dataclass
class MetricsReport:
    per_joint: dict
    mpjpe: float
    imu_related: float
    others: float
    frames: int
    config: dict = field(default_factory=dict)
    imu_related_joints: tuple = ()
    other_joints: tuple = ()

    def to_dict(self):
        return {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "units": "mm",
            "frames": self.frames,
            "mpjpe": self.mpjpe,
            "imu_related": self.imu_related,
            "others": self.others,
            "split": {
                "imu_related": list(self.imu_related_joints),
                "others": list(self.other_joints),
                "definition": SPLIT_DEFINITION,
            },
            "per_joint": dict(self.per_joint),
            "config": self.config,
        }


def _sequential_sum(values):
    """Left-to-right sum of a 1-D array (``cumsum`` never reorders)."""
    values = np.asarray(values, dtype=float)
    return float(np.cumsum(values)[-1]) if values.size else 0.0


def joint_distances(pred, gt):
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[-1] != 3:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} must both be (N, J, 3)")
    d = pred - gt
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])


def mpjpe(pred, gt, tree, config=None):
    """:class:`MetricsReport` of ``pred`` against ``gt`` (both (N, J, 3), mm)."""
    dist = joint_distances(pred, gt)
    n, J = dist.shape
    if J != tree.joint_count:
        raise ShapeError(f"poses have {J} joints, skeleton has {tree.joint_count}")
    if n == 0:
        raise ShapeError("no frames to evaluate")
    related = sk.imu_related_joints(tree)
    others = tuple(j for j in range(J) if j not in related)
    per_joint = {tree.names[j]: _sequential_sum(dist[:, j]) / n for j in range(J)}
    return MetricsReport(
        per_joint=per_joint,
        mpjpe=_sequential_sum(dist.ravel()) / dist.size,
        imu_related=_sequential_sum(dist[:, list(related)].ravel()) / (n * len(related)) if related else math.nan,
        others=_sequential_sum(dist[:, list(others)].ravel()) / (n * len(others)) if others else math.nan,
        frames=n,
        config=dict(config or {}),
        imu_related_joints=tuple(tree.names[j] for j in related),
        other_joints=tuple(tree.names[j] for j in others),
    )


def fuse_dataset(ds, method, theta_t, sensors=None, model=None, screen_against="vision", backend=None):
    """Fused positions (N, J, 3) and the replaced-bone mask (or ``None``) for one dataset."""
    if method == "none":
        return ds.vis_pose.copy(), None
    aligned = ds.aligned_imu(sensors)
    if method == "naive":
        return naive_fuse(ds.vis_pose, aligned, ds.tree, ds.rest, theta_t, screen_against, return_replaced=True)
    if method == "kine":
        _, pose, replaced = kine_fuse(ds.vis_pose, aligned, ds.rest, ds.tree, theta_t, screen_against,
                                      return_replaced=True, backend=backend)
        return pose, replaced
    if method == "ada":
        from .fusion import ada_fuse
        if model is None:
            raise ValueError("method 'ada' needs a trained model")
        return ada_fuse(model, ds.vis_pose, aligned, ds.rest, ds.tree)[1], None
    raise ValueError(f"unknown method {method!r}; expected none, naive, kine or ada")


def _stack(datasets, fn):
    preds, gts = [], []
    for ds in datasets:
        preds.append(fn(ds))
        gts.append(ds.gt_pose)
    return np.concatenate(preds, axis=0), np.concatenate(gts, axis=0)


def sweep_theta(datasets, method, grid=DEFAULT_THETA_GRID, include_inf=True, screen_against="vision"):
    """One row per threshold (plus ``inf``): MPJPE splits and the number of replaced bones.

    Returns ``{"rows": [...], "best": row}``; ``best`` is the finite row with
    the lowest MPJPE, earliest on ties.
    """
    if method not in ("naive", "kine"):
        raise ValueError("sweep_theta supports methods 'naive' and 'kine'")
    grid = [float(t) for t in grid]
    if not grid:
        raise ValueError("theta grid is empty")
    if include_inf and math.inf not in grid:
        grid = grid + [math.inf]
    datasets = list(datasets)
    tree = datasets[0].tree
    rows = []
    for theta in grid:
        replaced_total = 0

        def run(ds):
            nonlocal replaced_total
            pose, replaced = fuse_dataset(ds, method, theta, screen_against=screen_against)
            replaced_total += int(replaced.sum())
            return pose

        pred, gt = _stack(datasets, run)
        rep = mpjpe(pred, gt, tree)
        rows.append({"theta": theta, "mpjpe": rep.mpjpe, "imu_related": rep.imu_related,
                     "others": rep.others, "replaced": replaced_total})
    finite = [r for r in rows if math.isfinite(r["theta"])]
    best = min(finite, key=lambda r: r["mpjpe"]) if finite else None
    return {"method": method, "rows": rows, "best": best}


def named_subsets(tree):
    """The standard ablation subsets: none, upper limbs, lower limbs, all limbs."""
    groups = dict(tree.imu_groups)
    upper = tuple(sorted(groups.get("upper", ())))
    lower = tuple(sorted(groups.get("lower", ())))
    return {"none": (), "upper": upper, "lower": lower, "limbs": tuple(tree.sensors)}


def sweep_imu_subsets(datasets, subsets=None, theta_t=0.25, screen_against="vision", backend=None):
    """KineFuse MPJPE per sensor subset (``{name: sensor ids}``).

    The empty subset is fk(ik(vision)). Which of upper or lower limbs helps
    more depends on the data; the rows are reported, not ranked.
    """
    datasets = list(datasets)
    tree = datasets[0].tree
    subsets = named_subsets(tree) if subsets is None else dict(subsets)
    known = set(tree.sensors)
    rows = []
    for name, sensors in subsets.items():
        sensors = tuple(int(k) for k in sensors)
        unknown = sorted(set(sensors) - known)
        if unknown:
            raise CalibrationError(f"subset {name!r} names unknown sensors {unknown}")

        def run(ds):
            if not sensors:
                T, q = kl.ik_batch(ds.vis_pose, ds.rest, ds.tree, backend=backend)
                return kl.fk_batch(T, q, ds.rest, ds.tree, backend=backend)
            return fuse_dataset(ds, "kine", theta_t, sensors, screen_against=screen_against, backend=backend)[0]

        pred, gt = _stack(datasets, run)
        rep = mpjpe(pred, gt, tree)
        rows.append({"subset": name, "sensors": list(sensors), "mpjpe": rep.mpjpe,
                     "imu_related": rep.imu_related, "others": rep.others})
    return {"method": "kine", "theta_t": theta_t, "rows": rows}


def format_table(header, rows, floatfmt="{:.2f}"):
    """Aligned plain-text table; floats formatted with ``floatfmt``, ``inf`` as ``inf``."""
    def cell(v):
        if isinstance(v, float):
            return "inf" if math.isinf(v) else floatfmt.format(v)
        if isinstance(v, (list, tuple)):
            return ",".join(str(x) for x in v) or "-"
        return str(v)

    cells = [[cell(v) for v in row] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    return "\n".join(lines)


def report_table(report):
    rows = [[name, err] for name, err in report.per_joint.items()]
    rows += [["MPJPE", report.mpjpe], ["IMU-related", report.imu_related], ["Others", report.others]]
    return format_table(["joint", "error_mm"], rows)

"""Kinematic tree topology and rest (T-pose) geometry.

Every non-root joint ``j`` owns the bone from its parent to itself; its pose
rotation ``q_j`` rotates that bone and everything below it. Sensors are
assigned to bones by the bone's end joint.

Rest frames ``q_j^g`` map global coordinates into the local frame of joint
``j`` (``b^j = q_j^g . b^g``). The root has no local frame; it is treated as
identity wherever a parent frame is needed.
"""
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import quatkin as qk
from .errors import ConfigError, SkeletonError

SKELETON_FORMAT = "kinefuse-skeleton"
SKELETON_VERSION = 1
DEFAULT_SKELETON = "skeleton_tc16.json"


@dataclass(frozen=True)
class KinematicTree:
    parents: tuple
    names: tuple
    imu_map: dict = field(default_factory=dict)
    imu_groups: dict = field(default_factory=dict)

    @property
    def joint_count(self):
        return len(self.parents)

    @property
    def root(self):
        return self.parents.index(-1)

    @property
    def nonroot(self):
        return tuple(j for j in range(self.joint_count) if self.parents[j] >= 0)

    @property
    def order(self):
        """Joints in a fixed top-down order (parents before children)."""
        return _topological_order(self.parents)

    @property
    def sensors(self):
        """Sensor ids sorted ascending."""
        return tuple(sorted(self.imu_map.values()))

    @property
    def sensor_joint(self):
        return {k: j for j, k in self.imu_map.items()}

    def children(self, j):
        return tuple(c for c, p in enumerate(self.parents) if p == j)

    def subtree(self, j):
        out = [j]
        for c in self.children(j):
            out.extend(self.subtree(c))
        return tuple(sorted(out))

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown joint {name!r}") from None

    def parents_array(self):
        return np.asarray(self.parents, dtype=np.int64)

    def order_array(self):
        return np.asarray(self.order, dtype=np.int64)


def _topological_order(parents):
    children = {}
    root = None
    for j, p in enumerate(parents):
        if p < 0:
            root = j
        else:
            children.setdefault(p, []).append(j)
    order, frontier = [], [root]
    while frontier:
        nxt = []
        for j in frontier:
            order.append(j)
            nxt.extend(sorted(children.get(j, [])))
        frontier = nxt
    return tuple(order)


def build_tree(parents, names=None, imu_assignments=None, imu_groups=None):
    """Validate topology and sensor assignments and return a :class:`KinematicTree`.

    ``parents`` holds one parent index per joint, with a negative value (or
    ``None``) for the root. ``imu_assignments`` maps joint (index or name) to
    sensor id. All problems are collected before raising
    :class:`~kinefuse.errors.SkeletonError`.
    """
    parents = [-1 if p is None or p < 0 else int(p) for p in parents]
    n = len(parents)
    names = tuple(names) if names is not None else tuple(f"joint{j}" for j in range(n))
    problems = []

    if n == 0:
        raise SkeletonError(["tree has no joints"])
    if len(names) != n:
        problems.append(f"{len(names)} names for {n} joints")
    if len(set(names)) != len(names):
        problems.append("duplicate joint names")

    roots = [j for j, p in enumerate(parents) if p < 0]
    if len(roots) == 0:
        problems.append("no root joint")
    elif len(roots) > 1:
        problems.append(f"multiple roots: {roots}")
    for j, p in enumerate(parents):
        if p >= n:
            problems.append(f"joint {j} has out-of-range parent {p}")
        elif p == j:
            problems.append(f"joint {j} is its own parent")

    cyclic = set()
    for j in range(n):
        seen = set()
        k = j
        while 0 <= k < n and parents[k] >= 0 and k not in seen:
            seen.add(k)
            k = parents[k]
        if 0 <= k < n and k in seen:
            cyclic.add(k)
    if cyclic:
        problems.append(f"cycle detected through joints {sorted(cyclic)}")

    imu_map = {}
    for joint, sensor in (dict(imu_assignments or {})).items():
        if isinstance(joint, str):
            if joint not in names:
                problems.append(f"imu {sensor} on unknown joint {joint!r}")
                continue
            joint = names.index(joint)
        joint = int(joint)
        if not 0 <= joint < n:
            problems.append(f"imu {sensor} on out-of-range joint {joint}")
            continue
        if parents[joint] < 0:
            problems.append(f"imu {sensor} assigned to the root joint")
            continue
        sensor = int(sensor)
        if sensor < 1:
            problems.append(f"sensor index {sensor} must be >= 1")
        if sensor in imu_map.values():
            problems.append(f"duplicate sensor index {sensor}")
            continue
        imu_map[joint] = sensor

    groups = {}
    for group, sensors in (imu_groups or {}).items():
        ids = tuple(sorted(int(s) for s in sensors))
        unknown = [s for s in ids if s not in imu_map.values()]
        if unknown:
            problems.append(f"imu group {group!r} names unknown sensors {unknown}")
        groups[group] = ids

    if problems:
        raise SkeletonError(problems)
    return KinematicTree(tuple(parents), names, imu_map, groups)


def ancestor_chain(tree, j):
    """Ancestors of ``j`` from its immediate parent up to the root."""
    chain = []
    p = tree.parents[j]
    while p >= 0:
        chain.append(p)
        p = tree.parents[p]
    return chain


class RestPose:
    """Rest T-pose positions plus per-joint rest frames.

    Derived arrays (all indexed by joint; root rows are zero / identity):

    ``bones_global``  rest bone vectors ``p_j - p_pa(j)`` in the global frame
    ``bones_local``   the same bones expressed in each joint's local frame
    ``fk_offsets``    ``q^g_pa(j) * (q^g_j)^-1``, the rest term FK inserts
                      between a parent's rotation and the child's
    """

    def __init__(self, tree, positions, frames=None):
        positions = np.array(positions, dtype=float)
        n = tree.joint_count
        if positions.shape != (n, 3):
            raise SkeletonError([f"rest positions have shape {positions.shape}, expected ({n}, 3)"])
        if frames is None:
            frames = np.tile(qk.IDENTITY, (n, 1))
        frames = qk.quat_normalize(np.array(frames, dtype=float))
        root = tree.root
        frames[root] = qk.IDENTITY

        parents = np.asarray(tree.parents)
        bones = np.zeros((n, 3))
        nonroot = np.array(tree.nonroot, dtype=int)
        bones[nonroot] = positions[nonroot] - positions[parents[nonroot]]
        lengths = np.linalg.norm(bones, axis=1)
        short = [tree.names[j] for j in tree.nonroot if lengths[j] <= qk.EPS_LENGTH]
        if short:
            raise SkeletonError([f"zero-length rest bone at {name}" for name in short])

        offsets = np.tile(qk.IDENTITY, (n, 1))
        offsets[nonroot] = qk.quat_mul(frames[parents[nonroot]], qk.quat_inv(frames[nonroot]))

        self.positions = positions
        self.frames = frames
        self.bones_global = bones
        self.bones_local = qk.quat_rotate_vec(frames, bones)
        self.bones_local[root] = 0.0
        self.lengths = lengths
        self.fk_offsets = offsets
        for arr in (self.positions, self.frames, self.bones_global, self.bones_local,
                    self.lengths, self.fk_offsets):
            arr.setflags(write=False)

    @property
    def identity_frames(self):
        return bool(np.all(self.frames == qk.IDENTITY))


def relative_rest_rotation(rest, tree, j):
    """Rest rotation of joint ``j`` relative to its parent, ``q^g_j * (q^g_pa)^-1``."""
    p = tree.parents[j]
    if p < 0:
        raise ValueError("the root joint has no parent frame")
    return qk.quat_mul(rest.frames[j], qk.quat_inv(rest.frames[p]))


def bone_lengths(pose, tree):
    """Length of every bone, indexed by end joint (root entry is 0)."""
    pose = np.asarray(pose, dtype=float)
    parents = np.asarray(tree.parents)
    out = np.zeros(pose.shape[:-1])
    nonroot = np.array(tree.nonroot, dtype=int)
    out[..., nonroot] = np.linalg.norm(pose[..., nonroot, :] - pose[..., parents[nonroot], :], axis=-1)
    return out


def skeleton_from_dict(doc):
    if doc.get("format") != SKELETON_FORMAT:
        raise ConfigError(f"not a skeleton document (format={doc.get('format')!r})")
    if doc.get("version") != SKELETON_VERSION:
        raise ConfigError(f"unsupported skeleton version {doc.get('version')!r}")
    try:
        joints = doc["joints"]
        names = [j["name"] for j in joints]
        parents = []
        for j in joints:
            parent = j.get("parent")
            if parent is None:
                parents.append(-1)
            elif parent in names:
                parents.append(names.index(parent))
            else:
                raise SkeletonError([f"joint {j['name']!r} has unknown parent {parent!r}"])
        positions = [j["position"] for j in joints]
        frames = None
        if any("frame" in j for j in joints):
            frames = [j.get("frame", [1.0, 0.0, 0.0, 0.0]) for j in joints]
        imus = doc.get("imus", [])
        assignments = {i["joint"]: i["sensor"] for i in imus}
        groups = {}
        for i in imus:
            if "group" in i:
                groups.setdefault(i["group"], []).append(i["sensor"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed skeleton document: {exc}") from exc
    tree = build_tree(parents, names, assignments, groups)
    return tree, RestPose(tree, positions, frames)


def skeleton_to_dict(tree, rest):
    joints = []
    for j in range(tree.joint_count):
        entry = {
            "name": tree.names[j],
            "parent": None if tree.parents[j] < 0 else tree.names[tree.parents[j]],
            "position": [float(v) for v in rest.positions[j]],
        }
        if not rest.identity_frames:
            entry["frame"] = [float(v) for v in rest.frames[j]]
        joints.append(entry)
    group_of = {s: g for g, ids in tree.imu_groups.items() for s in ids}
    imus = []
    for j, k in sorted(tree.imu_map.items(), key=lambda item: item[1]):
        entry = {"joint": tree.names[j], "sensor": k}
        if k in group_of:
            entry["group"] = group_of[k]
        imus.append(entry)
    return {"format": SKELETON_FORMAT, "version": SKELETON_VERSION, "units": "mm",
            "joints": joints, "imus": imus}


def load_skeleton(path=None):
    """Load ``(tree, rest)`` from a skeleton JSON file, or the bundled default."""
    if path is None:
        text = resources.files("kinefuse.data").joinpath(DEFAULT_SKELETON).read_text()
    else:
        text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"skeleton file is not valid JSON: {exc}") from exc
    return skeleton_from_dict(doc)


def imu_related_joints(tree):
    """Joints at the end of a sensor-carrying bone."""
    return tuple(sorted(tree.imu_map))

"""Canonical 16-joint skeleton: joint ordering, pose containers, bones and bone groups.

Every dataset converter, loss, and metric in this package speaks this
representation.  The ordering follows the MPII convention:

    0 r_ankle   1 r_knee    2 r_hip     3 l_hip
    4 l_knee    5 l_ankle   6 pelvis    7 thorax
    8 neck      9 head_top 10 r_wrist  11 r_elbow
   12 r_shoulder 13 l_shoulder 14 l_elbow 15 l_wrist

The bone graph is a tree rooted at the pelvis.  Canonical bone lengths come
from a reference-skeleton JSON file shipped with the package and can be
overridden by user-supplied files with the same schema.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

NUM_JOINTS = 16

JOINT_NAMES = [
    "r_ankle", "r_knee", "r_hip", "l_hip", "l_knee", "l_ankle",
    "pelvis", "thorax", "neck", "head_top",
    "r_wrist", "r_elbow", "r_shoulder", "l_shoulder", "l_elbow", "l_wrist",
]

ROOT = 6        # pelvis
NECK = 8
HEAD_TOP = 9

_JOINT_INDEX = {name: i for i, name in enumerate(JOINT_NAMES)}

# Bone name -> (parent joint index, child joint index).  15 edges over 16
# joints; the graph is a tree rooted at the pelvis.
BONES: dict[str, tuple[int, int]] = {
    "spine": (6, 7),
    "neck": (7, 8),
    "head": (8, 9),
    "r_clavicle": (7, 12),
    "l_clavicle": (7, 13),
    "r_upper_arm": (12, 11),
    "l_upper_arm": (13, 14),
    "r_forearm": (11, 10),
    "l_forearm": (14, 15),
    "r_hip": (6, 2),
    "l_hip": (6, 3),
    "r_thigh": (2, 1),
    "l_thigh": (3, 4),
    "r_shin": (1, 0),
    "l_shin": (4, 5),
}

BONE_EDGES: list[tuple[int, int]] = list(BONES.values())

# Rest-pose unit direction of each bone, in a frame with +x to the
# subject's left, +y down (image-like), +z away from the camera.
_REST_DIRECTIONS: dict[str, tuple[float, float, float]] = {
    "spine": (0.0, -1.0, 0.0),
    "neck": (0.0, -1.0, 0.0),
    "head": (0.0, -1.0, 0.0),
    "r_clavicle": (-1.0, 0.0, 0.0),
    "l_clavicle": (1.0, 0.0, 0.0),
    "r_upper_arm": (0.0, 1.0, 0.0),
    "l_upper_arm": (0.0, 1.0, 0.0),
    "r_forearm": (0.0, 1.0, 0.0),
    "l_forearm": (0.0, 1.0, 0.0),
    "r_hip": (-1.0, 0.0, 0.0),
    "l_hip": (1.0, 0.0, 0.0),
    "r_thigh": (0.0, 1.0, 0.0),
    "l_thigh": (0.0, 1.0, 0.0),
    "r_shin": (0.0, 1.0, 0.0),
    "l_shin": (0.0, 1.0, 0.0),
}

FRAMES = ("camera_mm", "root_aligned_mm", "image_scaled")


class UnknownJointError(KeyError):
    """Raised for a joint name outside the canonical 16."""


def canonical_joint_index(name: str) -> int:
    """Index of a canonical joint name in the fixed MPII-style ordering."""
    try:
        return _JOINT_INDEX[name]
    except KeyError:
        raise UnknownJointError(
            f"unknown joint {name!r}; valid names: {', '.join(JOINT_NAMES)}"
        ) from None


@dataclass(frozen=True)
class CanonicalSkeleton:
    """Joint names, bone edges, and root index of the canonical skeleton."""

    joint_names: tuple[str, ...] = tuple(JOINT_NAMES)
    bone_edges: tuple[tuple[int, int], ...] = tuple(BONE_EDGES)
    root_index: int = ROOT

    def __post_init__(self):
        if len(self.joint_names) != NUM_JOINTS:
            raise ValueError(f"expected {NUM_JOINTS} joints, got {len(self.joint_names)}")
        used = sorted(i for edge in self.bone_edges for i in edge)
        if min(used) < 0 or max(used) >= NUM_JOINTS:
            raise ValueError("bone edge references an invalid joint index")
        # A connected acyclic graph over 16 nodes has exactly 15 edges.
        if len(self.bone_edges) != NUM_JOINTS - 1:
            raise ValueError("bone graph must be a tree (15 edges over 16 joints)")
        reached = {self.root_index}
        frontier = [self.root_index]
        adj: dict[int, list[int]] = {i: [] for i in range(NUM_JOINTS)}
        for a, b in self.bone_edges:
            adj[a].append(b)
            adj[b].append(a)
        while frontier:
            node = frontier.pop()
            for other in adj[node]:
                if other not in reached:
                    reached.add(other)
                    frontier.append(other)
        if len(reached) != NUM_JOINTS:
            raise ValueError("bone graph is not connected")
        if self.joint_names[self.root_index] != "pelvis":
            raise ValueError("root joint must be the pelvis")


DEFAULT_SKELETON = CanonicalSkeleton()


def _as_coords(values, dim: int) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != (NUM_JOINTS, dim):
        raise ValueError(f"expected coordinate array of shape ({NUM_JOINTS}, {dim}), got {arr.shape}")
    return arr


def _as_visibility(values) -> np.ndarray:
    if values is None:
        return np.ones(NUM_JOINTS, dtype=bool)
    arr = np.asarray(values, dtype=bool)
    if arr.shape != (NUM_JOINTS,):
        raise ValueError(f"visibility must have shape ({NUM_JOINTS},), got {arr.shape}")
    return arr


@dataclass
class CanonicalPose2D:
    """A 16-joint 2D pose in image pixels.

    Invisible joints always carry coordinate (0, 0); the constructor
    enforces this by zeroing them.
    """

    coords: np.ndarray
    visibility: np.ndarray = None

    def __post_init__(self):
        self.coords = _as_coords(self.coords, 2)
        self.visibility = _as_visibility(self.visibility)
        self.coords[~self.visibility] = 0.0

    def copy(self) -> "CanonicalPose2D":
        return CanonicalPose2D(self.coords.copy(), self.visibility.copy())


@dataclass
class CanonicalPose3D:
    """A 16-joint 3D pose.

    frame is one of:
      camera_mm       millimetres in the camera coordinate system
      root_aligned_mm millimetres with the pelvis translated to the origin
      image_scaled    x, y in image pixels; z in image-scaled depth units
    """

    coords: np.ndarray
    frame: str = "camera_mm"
    visibility: np.ndarray = None

    def __post_init__(self):
        self.coords = _as_coords(self.coords, 3)
        if self.frame not in FRAMES:
            raise ValueError(f"unknown frame {self.frame!r}; expected one of {FRAMES}")
        self.visibility = _as_visibility(self.visibility)
        if self.frame == "root_aligned_mm" and np.any(self.coords[ROOT] != 0.0):
            raise ValueError("root_aligned_mm pose must have the pelvis at the origin")

    def copy(self) -> "CanonicalPose3D":
        return CanonicalPose3D(self.coords.copy(), self.frame, self.visibility.copy())


def bone_length(pose: CanonicalPose3D, bone: tuple[int, int]) -> float:
    """Euclidean length in mm of one bone edge of a metric-frame pose."""
    if pose.frame not in ("camera_mm", "root_aligned_mm"):
        raise ValueError(f"bone_length needs a metric frame, got {pose.frame!r}")
    a, b = bone
    if not (0 <= a < NUM_JOINTS and 0 <= b < NUM_JOINTS):
        raise ValueError(f"invalid bone edge {bone}")
    return float(np.linalg.norm(pose.coords[a] - pose.coords[b]))


@dataclass
class BoneGroup:
    """A named set of bones whose length ratios are assumed near-constant.

    canonical_lengths maps each edge to its reference length in mm; a group
    of fewer than two bones carries no ratio information and is rejected.
    """

    name: str
    bones: list[tuple[int, int]]
    canonical_lengths: dict[tuple[int, int], float]

    def __post_init__(self):
        if len(self.bones) < 2:
            raise ValueError(f"bone group {self.name!r} needs at least 2 bones")
        for edge in self.bones:
            length = self.canonical_lengths.get(edge)
            if length is None:
                raise ValueError(f"bone group {self.name!r} is missing a length for edge {edge}")
            if not length > 0:
                raise ValueError(f"bone group {self.name!r} has nonpositive length for edge {edge}")


# Bone-group membership used throughout: left/right symmetric limb pairs.
GROUP_BONES: dict[str, list[str]] = {
    "arms": ["r_upper_arm", "l_upper_arm", "r_forearm", "l_forearm"],
    "legs": ["r_thigh", "l_thigh", "r_shin", "l_shin"],
    "shoulders": ["r_clavicle", "l_clavicle"],
    "hips": ["r_hip", "l_hip"],
}


def default_bone_groups(
    skeleton: CanonicalSkeleton, canonical_pose: CanonicalPose3D
) -> list[BoneGroup]:
    """Build the four default bone groups with lengths measured on a reference pose.

    The pose must be a fully-visible metric pose; a zero-length bone inside
    any group is rejected because it would make ratios undefined.
    """
    if not np.all(canonical_pose.visibility):
        raise ValueError("reference pose must have all 16 joints visible")
    groups = []
    for name, bone_names in GROUP_BONES.items():
        edges = [BONES[b] for b in bone_names]
        lengths = {}
        for bone_name, edge in zip(bone_names, edges):
            length = bone_length(canonical_pose, edge)
            if length <= 0.0:
                raise ValueError(f"zero-length bone {bone_name!r} in reference pose")
            lengths[edge] = length
        groups.append(BoneGroup(name=name, bones=edges, canonical_lengths=lengths))
    return groups


def load_reference_lengths(path: str | Path | None = None) -> dict[str, float]:
    """Load canonical bone lengths (mm) from a reference-skeleton JSON file.

    Without a path, the file shipped with the package is used.  The file must
    contain a "bones" mapping covering every canonical bone name.
    """
    if path is None:
        with resources.files("pose3d.data").joinpath("reference_skeleton.json").open() as fh:
            doc = json.load(fh)
    else:
        with open(path) as fh:
            doc = json.load(fh)
    bones = doc.get("bones")
    if not isinstance(bones, dict):
        raise ValueError("reference skeleton file must contain a 'bones' mapping")
    missing = sorted(set(BONES) - set(bones))
    if missing:
        raise ValueError(f"reference skeleton file is missing bones: {', '.join(missing)}")
    lengths = {name: float(bones[name]) for name in BONES}
    bad = sorted(name for name, v in lengths.items() if not v > 0)
    if bad:
        raise ValueError(f"reference skeleton lengths must be positive: {', '.join(bad)}")
    return lengths


def rest_pose(lengths: dict[str, float] | None = None) -> CanonicalPose3D:
    """Construct the upright rest pose from bone lengths.

    Joints are placed by walking the bone tree from the pelvis along the
    fixed rest directions, so measured bone lengths match the input exactly.
    Returned in the root_aligned_mm frame with all joints visible.
    """
    if lengths is None:
        lengths = load_reference_lengths()
    coords = np.zeros((NUM_JOINTS, 3), dtype=np.float64)
    placed = {ROOT}
    # BONES is ordered parent-before-child, so one pass suffices.
    for name, (parent, child) in BONES.items():
        if parent not in placed:
            raise RuntimeError(f"bone table is not in tree order at {name!r}")
        direction = np.asarray(_REST_DIRECTIONS[name], dtype=np.float64)
        coords[child] = coords[parent] + direction * lengths[name]
        placed.add(child)
    return CanonicalPose3D(coords, frame="root_aligned_mm")

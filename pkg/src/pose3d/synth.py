"""Synthetic pose, image, and source-record generation for desk-scale testing.

Poses are built by forward kinematics over the canonical bone tree: every
bone keeps exactly its profile length while joint rotations are jittered
around an upright rest pose.  The shoulder and hip girdles are jittered as
rigid mirrored pairs, so the thorax stays exactly on the shoulder midpoint
and the pelvis on the hip midpoint; the LSP/OP midpoint inference rules are
then exact inverses.  Limb jitter is biased toward the camera, giving the
depth distribution learnable structure.

Images are deterministic rasters: limbs as anti-aliased strokes and joints
as colour-coded blobs over low-amplitude noise.  When depth labels are
available the blob brightness encodes them (a stand-in for the shading and
perspective cues of real footage), so a small network can learn both joint
localisation and depth regression.
"""
from __future__ import annotations

import colorsys
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import harmonize
from .harmonize import (
    FLIC_JOINTS,
    H36M_JOINTS,
    LSP_JOINTS,
    MPII3D_TEST_JOINTS,
    MPII3D_TRAIN_JOINTS,
    OP_JOINTS,
    HarmonizeError,
    RawRecord,
)
from .skeleton import (
    BONES,
    JOINT_NAMES,
    NUM_JOINTS,
    ROOT,
    CanonicalPose2D,
    CanonicalPose3D,
    canonical_joint_index,
    load_reference_lengths,
    _REST_DIRECTIONS,
)

# Re-export: projection is shared with the harmonizer so both sides of the
# round trip use the same camera model.
project_to_2d = harmonize.project_pinhole


def snap_inferred_joints(pose2d: CanonicalPose2D) -> CanonicalPose2D:
    """Make a 2D pose self-consistent with the midpoint inference rules.

    Perspective projection does not map 3D midpoints to 2D midpoints, so a
    projected thorax sits a fraction of a pixel off the 2D shoulder midpoint.
    2D-format exports (which drop the thorax/pelvis and let the converter
    re-infer them) snap both joints to the exact 2D midpoints first; the
    adjustment is sub-0.1px at the default camera.
    """
    coords = pose2d.coords.copy()
    thorax = canonical_joint_index("thorax")
    pelvis = canonical_joint_index("pelvis")
    coords[thorax] = 0.5 * (
        coords[canonical_joint_index("l_shoulder")] + coords[canonical_joint_index("r_shoulder")]
    )
    coords[pelvis] = 0.5 * (
        coords[canonical_joint_index("l_hip")] + coords[canonical_joint_index("r_hip")]
    )
    return CanonicalPose2D(coords, pose2d.visibility.copy())


def default_camera(image_size: int, depth_offset_mm: float = 2200.0) -> dict:
    """Pinhole intrinsics that frame the default skeleton at the given offset."""
    return {
        "fx": float(image_size),
        "fy": float(image_size),
        "cx": image_size / 2.0,
        "cy": image_size / 2.0,
        "width": float(image_size),
        "height": float(image_size),
        "depth_offset_mm": float(depth_offset_mm),
    }


@dataclass
class SynthParams:
    """Knobs of the synthetic generator; fixed params + seed give fixed bytes."""

    seed: int = 0
    n_samples: int = 100
    bone_length_profile: dict[str, float] | None = None
    pose_jitter: float = 0.18
    camera: dict | None = None
    image_size: int = 64
    nan_probability: float = 0.1

    def __post_init__(self):
        if self.bone_length_profile is None:
            self.bone_length_profile = load_reference_lengths()
        bad = sorted(n for n, v in self.bone_length_profile.items() if not v > 0)
        if bad:
            raise ValueError(f"bone lengths must be positive: {', '.join(bad)}")
        if self.camera is None:
            self.camera = default_camera(self.image_size)
        if self.pose_jitter < 0:
            raise ValueError("pose_jitter must be nonnegative")


def _rotation(rotvec: np.ndarray) -> np.ndarray:
    """Rodrigues rotation matrix for an axis-angle vector."""
    theta = float(np.linalg.norm(rotvec))
    if theta < 1e-12:
        return np.eye(3)
    k = rotvec / theta
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


# Bones jittered together share one rotation.  Mirrored girdle pairs rotate
# rigidly, which is what keeps midpoint inferences exact.
_JITTER_UNITS: list[list[str]] = [
    ["spine"], ["neck"], ["head"],
    ["r_clavicle", "l_clavicle"],
    ["r_hip", "l_hip"],
    ["r_upper_arm"], ["l_upper_arm"], ["r_forearm"], ["l_forearm"],
    ["r_thigh"], ["l_thigh"], ["r_shin"], ["l_shin"],
]

# Unitless rotation biases (multiplied by pose_jitter); negative x-rotation
# swings a downward-pointing bone toward the camera.
_JITTER_BIAS: dict[str, tuple[float, float, float]] = {
    "r_upper_arm": (-0.8, 0.0, 0.0),
    "l_upper_arm": (-0.8, 0.0, 0.0),
    "r_forearm": (-2.2, 0.0, 0.0),
    "l_forearm": (-2.2, 0.0, 0.0),
    "r_thigh": (-0.5, 0.0, 0.0),
    "l_thigh": (-0.5, 0.0, 0.0),
    "r_shin": (1.0, 0.0, 0.0),
    "l_shin": (1.0, 0.0, 0.0),
}

_ZERO_BIAS = (0.0, 0.0, 0.0)


def generate_pose3d(params: SynthParams, rng: np.random.Generator) -> CanonicalPose3D:
    """Generate one kinematically consistent camera-frame pose.

    Bone lengths match the profile exactly; all jitter (joint rotations,
    global rotation, root placement noise) scales with pose_jitter, so
    pose_jitter = 0 reproduces the rest pose at the camera depth offset.
    """
    j = params.pose_jitter
    lengths = params.bone_length_profile
    global_rot = _rotation(j * rng.normal(0.0, 1.0, 3) * np.array([0.4, 1.5, 0.4]))
    unit_rot: dict[str, np.ndarray] = {}
    for unit in _JITTER_UNITS:
        bias = np.array(_JITTER_BIAS.get(unit[0], _ZERO_BIAS))
        rot = _rotation(j * (bias + rng.normal(0.0, 1.0, 3)))
        for bone in unit:
            unit_rot[bone] = rot

    offset = params.camera["depth_offset_mm"]
    root = np.array([0.0, 0.0, offset])
    root += j * rng.normal(0.0, 1.0, 3) * np.array([400.0, 250.0, 0.15 * offset])

    coords = np.zeros((NUM_JOINTS, 3))
    coords[ROOT] = root
    cumulative = {ROOT: global_rot}
    for name, (parent, child) in BONES.items():
        rot = cumulative[parent] @ unit_rot[name]
        cumulative[child] = rot
        direction = np.asarray(_REST_DIRECTIONS[name])
        coords[child] = coords[parent] + rot @ (direction * lengths[name])
    return CanonicalPose3D(coords, frame="camera_mm")


# ---------------------------------------------------------------------------
# source-format emission (inverse of the harmonize converters)


def _head_frame(pose2d: CanonicalPose2D) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    head_top = pose2d.coords[canonical_joint_index("head_top")]
    neck = pose2d.coords[canonical_joint_index("neck")]
    axis = head_top - neck
    perp = np.array([-axis[1], axis[0]])
    return head_top, axis, perp


def _midpoint(pose, a: str, b: str) -> np.ndarray:
    return 0.5 * (pose.coords[canonical_joint_index(a)] + pose.coords[canonical_joint_index(b)])


def _extend(pose, near: str, far: str, factor: float) -> np.ndarray:
    n = pose.coords[canonical_joint_index(near)]
    f = pose.coords[canonical_joint_index(far)]
    return f + factor * (f - n)


def _emit_flic(pose2d: CanonicalPose2D, rng: np.random.Generator, nan_probability: float) -> dict:
    joints: dict[str, np.ndarray] = {}
    for name in FLIC_JOINTS:
        if name in JOINT_NAMES:
            joints[name] = pose2d.coords[canonical_joint_index(name)].copy()
    head_top, axis, perp = _head_frame(pose2d)
    joints["nose"] = head_top.copy()
    joints["mid_shoulder"] = pose2d.coords[canonical_joint_index("neck")].copy()
    joints["mid_torso"] = pose2d.coords[canonical_joint_index("thorax")].copy()
    joints["l_eye"] = head_top - 0.35 * axis + 0.18 * perp
    joints["r_eye"] = head_top - 0.35 * axis - 0.18 * perp
    joints["l_ear"] = head_top - 0.55 * axis + 0.32 * perp
    joints["r_ear"] = head_top - 0.55 * axis - 0.32 * perp
    joints["mid_head"] = _midpoint(pose2d, "neck", "head_top")
    joints["mid_l_upper_arm"] = _midpoint(pose2d, "l_shoulder", "l_elbow")
    joints["mid_r_upper_arm"] = _midpoint(pose2d, "r_shoulder", "r_elbow")
    joints["mid_l_lower_arm"] = _midpoint(pose2d, "l_elbow", "l_wrist")
    joints["mid_r_lower_arm"] = _midpoint(pose2d, "r_elbow", "r_wrist")
    joints["mid_l_upper_leg"] = _midpoint(pose2d, "l_hip", "l_knee")
    joints["mid_r_upper_leg"] = _midpoint(pose2d, "r_hip", "r_knee")
    joints["mid_l_lower_leg"] = _midpoint(pose2d, "l_knee", "l_ankle")
    joints["mid_r_lower_leg"] = _midpoint(pose2d, "r_knee", "r_ankle")
    if nan_probability > 0:
        for name in FLIC_JOINTS:
            if rng.random() < nan_probability:
                joints[name] = np.array([np.nan, np.nan])
    return joints


def _emit_h36m(pose3d: CanonicalPose3D) -> dict:
    joints = {}
    for name in H36M_JOINTS:
        if name == "spine":
            joints[name] = pose3d.coords[canonical_joint_index("thorax")].copy()
        elif name == "head":
            joints[name] = _midpoint(pose3d, "neck", "head_top")
        else:
            joints[name] = pose3d.coords[canonical_joint_index(name)].copy()
    return joints


def _emit_mpii3d(pose3d: CanonicalPose3D, split: str) -> dict:
    pelvis = pose3d.coords[canonical_joint_index("pelvis")]
    thorax = pose3d.coords[canonical_joint_index("thorax")]
    names = MPII3D_TRAIN_JOINTS if split == "train" else MPII3D_TEST_JOINTS
    # The spine chain is interpolated pelvis -> thorax, so the joint nearest
    # the shoulder midpoint is spine4 (train) / spine (test) == the thorax.
    spine_fraction = {"spine": 0.25 if split == "train" else 1.0, "spine2": 0.5, "spine3": 0.75, "spine4": 1.0}
    joints = {}
    for name in names:
        if name in JOINT_NAMES:
            joints[name] = pose3d.coords[canonical_joint_index(name)].copy()
        elif name in spine_fraction:
            t = spine_fraction[name]
            joints[name] = pelvis + t * (thorax - pelvis)
        elif name == "head":
            joints[name] = _midpoint(pose3d, "neck", "head_top")
        elif name in ("l_clavicle", "r_clavicle"):
            side = name[0] + "_shoulder"
            joints[name] = _midpoint(pose3d, "thorax", side)
        elif name in ("l_hand", "r_hand"):
            side = name[0]
            joints[name] = _extend(pose3d, f"{side}_elbow", f"{side}_wrist", 0.35)
        elif name in ("l_foot", "r_foot"):
            side = name[0]
            joints[name] = _extend(pose3d, f"{side}_knee", f"{side}_ankle", 0.12)
        elif name in ("l_toe", "r_toe"):
            side = name[0]
            joints[name] = _extend(pose3d, f"{side}_knee", f"{side}_ankle", 0.22)
        else:
            raise HarmonizeError(f"unhandled MPII3D joint {name!r}")
    return joints


def _emit_op(pose3d: CanonicalPose3D) -> dict:
    joints = {}
    for name in OP_JOINTS:
        if name == "head":
            joints[name] = _midpoint(pose3d, "neck", "head_top")
        else:
            joints[name] = pose3d.coords[canonical_joint_index(name)].copy()
    return joints


def emit_source_format(
    pose,
    target: str,
    rng: np.random.Generator,
    *,
    split: str = "train",
    camera: dict | None = None,
    image_ref: str = "",
    nan_probability: float = 0.1,
) -> RawRecord:
    """Encode a canonical pose as a source-native RawRecord.

    2D targets (MPII, LSP, FLIC) take a CanonicalPose2D; 3D targets (H36M,
    MPII3D, OP) take a camera-frame CanonicalPose3D and attach the camera so
    the harmonizer can recover the 2D pose.  Joints the target format lacks
    are synthesised deterministically from their neighbours; FLIC occlusions
    are injected as NaN with the given probability.
    """
    if target in harmonize.DATASETS_2D:
        if not isinstance(pose, CanonicalPose2D):
            raise HarmonizeError(f"target {target} is a 2D format; got a {type(pose).__name__}")
        if target == "MPII":
            joints = {n: pose.coords[canonical_joint_index(n)].copy() for n in JOINT_NAMES}
        elif target == "LSP":
            joints = {n: pose.coords[canonical_joint_index(n)].copy() for n in LSP_JOINTS}
        else:
            joints = _emit_flic(pose, rng, nan_probability)
        return RawRecord(dataset_id=target, joints=joints, image_ref=image_ref, split=split)

    if target in harmonize.DATASETS_3D:
        if not isinstance(pose, CanonicalPose3D):
            raise HarmonizeError(f"target {target} is a 3D format; got a {type(pose).__name__}")
        if pose.frame != "camera_mm":
            raise HarmonizeError(f"3D emission needs a camera_mm pose, got {pose.frame!r}")
        if target == "H36M":
            joints = _emit_h36m(pose)
        elif target == "MPII3D":
            joints = _emit_mpii3d(pose, split)
        else:
            joints = _emit_op(pose)
        return RawRecord(
            dataset_id=target, joints=joints, image_ref=image_ref, split=split, camera=camera
        )

    raise HarmonizeError(f"unknown target format {target!r}")


def generate_records(params: SynthParams, target: str, split: str = "train") -> list[RawRecord]:
    """Generate n_samples RawRecords in the target source format."""
    rng = np.random.default_rng(params.seed)
    records = []
    for i in range(params.n_samples):
        pose_cam = generate_pose3d(params, rng)
        ref = f"synth://{target.lower()}/{params.seed}/{i}"
        if target in harmonize.DATASETS_2D:
            pose2d = snap_inferred_joints(project_to_2d(pose_cam, params.camera))
            rec = emit_source_format(
                pose2d, target, rng, split=split, image_ref=ref,
                nan_probability=params.nan_probability if target == "FLIC" else 0.0,
            )
        else:
            rec = emit_source_format(
                pose_cam, target, rng, split=split, camera=dict(params.camera), image_ref=ref
            )
        records.append(rec)
    return records


# ---------------------------------------------------------------------------
# image rendering

_PALETTE = np.array(
    [colorsys.hsv_to_rgb(j / NUM_JOINTS, 0.85, 1.0) for j in range(NUM_JOINTS)]
)

_STROKE_LEVEL = 0.5
_NOISE_LEVEL = 0.12
_BLOB_SIGMA = 1.6


def _segment_distance(px: np.ndarray, py: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from every pixel centre to the segment a-b."""
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-12:
        return np.hypot(px - a[0], py - a[1])
    t = ((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / denom
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(px - (a[0] + t * ab[0]), py - (a[1] + t * ab[1]))


def render_pose_image(
    pose2d: CanonicalPose2D, image_size: int, depth: np.ndarray | None = None
) -> np.ndarray:
    """Deterministic (S, S, 3) float32 raster of a 2D pose.

    Limbs with both endpoints visible are drawn as anti-aliased strokes;
    visible joints as colour-coded Gaussian blobs whose brightness encodes
    the depth label when one is supplied.  The noise background is seeded
    from the pose bytes, so identical inputs give identical bytes.
    """
    if image_size <= 0:
        raise ValueError("image_size must be positive")
    seed_bytes = pose2d.coords.tobytes() + pose2d.visibility.tobytes()
    if depth is not None:
        depth = np.asarray(depth, dtype=np.float64)
        seed_bytes += depth.tobytes()
    rng = np.random.default_rng(zlib.crc32(seed_bytes))
    noise = rng.random((image_size, image_size, 1)) * _NOISE_LEVEL

    ys, xs = np.mgrid[0:image_size, 0:image_size]
    px = xs + 0.5
    py = ys + 0.5

    strokes = np.zeros((image_size, image_size))
    for a_idx, b_idx in BONES.values():
        if not (pose2d.visibility[a_idx] and pose2d.visibility[b_idx]):
            continue
        dist = _segment_distance(px, py, pose2d.coords[a_idx], pose2d.coords[b_idx])
        strokes = np.maximum(strokes, np.clip(1.4 - dist, 0.0, 1.0))

    blobs = np.zeros((image_size, image_size, 3))
    for j in range(NUM_JOINTS):
        if not pose2d.visibility[j]:
            continue
        d2 = (px - pose2d.coords[j, 0]) ** 2 + (py - pose2d.coords[j, 1]) ** 2
        g = np.exp(-d2 / (2.0 * _BLOB_SIGMA**2))
        brightness = 0.8 if depth is None else float(np.clip(0.8 - 0.025 * depth[j], 0.2, 1.0))
        blobs += g[:, :, None] * _PALETTE[j] * brightness

    image = np.clip(noise + strokes[:, :, None] * _STROKE_LEVEL + blobs, 0.0, 1.0)
    return image.astype(np.float32)

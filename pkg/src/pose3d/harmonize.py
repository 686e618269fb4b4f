"""Per-dataset annotation converters into the canonical 16-joint format.

Source records arrive as JSON-lines exports (one record per line) with
named joints; each dataset has a fixed joint vocabulary:

  MPII    16 joints, already canonical
  LSP     14 joints; thorax and pelvis inferred as shoulder/hip midpoints
  FLIC    29 joints, NaN-annotated occlusions; thorax <- mid_torso,
          neck <- mid_shoulder, head_top <- nose
  H36M    17 3D joints; thorax <- spine, surplus head joint dropped
  MPII3D  28 (train) / 17 (test) 3D joints; thorax <- spine joint nearest
          the shoulder midpoint
  OP      15 3D joints; thorax <- shoulder midpoint, head_top <- neck

3D records are root-aligned, paired with an image-plane 2D pose (projected
through the record camera, or read from an explicit canonical joints2d
block), and given image-scaled depth labels via a least-squares scale fit.
Records whose scale fit is degenerate or negative are kept but flagged
excluded: badly scaled depth labels are a known source of divergence.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .skeleton import (
    JOINT_NAMES,
    NUM_JOINTS,
    ROOT,
    CanonicalPose2D,
    CanonicalPose3D,
    canonical_joint_index,
)

DATASETS_2D = ("MPII", "LSP", "FLIC")
DATASETS_3D = ("H36M", "MPII3D", "OP")


class HarmonizeError(ValueError):
    """Invalid or inconvertible source record."""


class MissingJointError(HarmonizeError):
    """A joint required by the conversion is absent from the record."""


class DegenerateScaleError(HarmonizeError):
    """The depth-scale fit has no usable solution for this record."""


class RecordParseError(ValueError):
    """A JSON-lines record failed to parse; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


# ---------------------------------------------------------------------------
# source joint vocabularies

LSP_JOINTS = [
    "r_ankle", "r_knee", "r_hip", "l_hip", "l_knee", "l_ankle",
    "r_wrist", "r_elbow", "r_shoulder", "l_shoulder", "l_elbow", "l_wrist",
    "neck", "head_top",
]

# 13 canonical-named joints plus face points, segment midpoints, and the
# three stand-ins (nose / mid_shoulder / mid_torso) for the missing
# head_top / neck / thorax.
FLIC_JOINTS = [
    "r_ankle", "r_knee", "r_hip", "l_hip", "l_knee", "l_ankle", "pelvis",
    "r_wrist", "r_elbow", "r_shoulder", "l_shoulder", "l_elbow", "l_wrist",
    "nose", "mid_shoulder", "mid_torso",
    "l_eye", "r_eye", "l_ear", "r_ear", "mid_head",
    "mid_l_upper_arm", "mid_r_upper_arm", "mid_l_lower_arm", "mid_r_lower_arm",
    "mid_l_upper_leg", "mid_r_upper_leg", "mid_l_lower_leg", "mid_r_lower_leg",
]

H36M_JOINTS = [
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "spine", "neck", "head", "head_top",
    "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
]

MPII3D_TRAIN_JOINTS = [
    "spine3", "spine4", "spine2", "spine", "pelvis", "neck", "head", "head_top",
    "l_clavicle", "l_shoulder", "l_elbow", "l_wrist", "l_hand",
    "r_clavicle", "r_shoulder", "r_elbow", "r_wrist", "r_hand",
    "l_hip", "l_knee", "l_ankle", "l_foot", "l_toe",
    "r_hip", "r_knee", "r_ankle", "r_foot", "r_toe",
]

MPII3D_TEST_JOINTS = [
    "head_top", "neck",
    "r_shoulder", "r_elbow", "r_wrist", "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "pelvis", "spine", "head",
]

OP_JOINTS = [
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
]


def expected_joint_names(dataset_id: str, split: str) -> list[str]:
    if dataset_id == "MPII":
        return list(JOINT_NAMES)
    if dataset_id == "LSP":
        return list(LSP_JOINTS)
    if dataset_id == "FLIC":
        return list(FLIC_JOINTS)
    if dataset_id == "H36M":
        return list(H36M_JOINTS)
    if dataset_id == "MPII3D":
        return list(MPII3D_TRAIN_JOINTS if split == "train" else MPII3D_TEST_JOINTS)
    if dataset_id == "OP":
        return list(OP_JOINTS)
    raise HarmonizeError(f"unknown dataset {dataset_id!r}")


@dataclass
class RawRecord:
    """One source annotation before conversion.

    joints maps source-native names to (2,) or (3,) arrays; FLIC entries may
    contain NaN.  3D records carry camera-frame mm coordinates plus either a
    camera block (for projection) or an explicit canonical joints2d block.
    """

    dataset_id: str
    joints: dict[str, np.ndarray]
    image_ref: str = ""
    split: str = "train"
    camera: dict | None = None
    joints2d: dict[str, np.ndarray] | None = None

    def __post_init__(self):
        if self.dataset_id not in DATASETS_2D + DATASETS_3D:
            raise HarmonizeError(f"unknown dataset {self.dataset_id!r}")
        if self.split not in ("train", "test"):
            raise HarmonizeError(f"unknown split {self.split!r}")
        dim = 3 if self.dataset_id in DATASETS_3D else 2
        joints = {}
        for name, value in self.joints.items():
            arr = np.asarray(value, dtype=np.float64)
            if arr.shape != (dim,):
                raise HarmonizeError(
                    f"{self.dataset_id} joint {name!r} must have {dim} coordinates, got shape {arr.shape}"
                )
            joints[name] = arr
        self.joints = joints
        expected = expected_joint_names(self.dataset_id, self.split)
        if set(self.joints) != set(expected):
            missing = sorted(set(expected) - set(self.joints))
            extra = sorted(set(self.joints) - set(expected))
            parts = []
            if missing:
                parts.append(f"missing {', '.join(missing)}")
            if extra:
                parts.append(f"unexpected {', '.join(extra)}")
            raise HarmonizeError(
                f"{self.dataset_id} ({self.split}) record has a bad joint set "
                f"({len(self.joints)} of {len(expected)}): {'; '.join(parts)}"
            )


@dataclass
class HarmonizedSample:
    """A canonical training/evaluation sample.

    source set_3d samples carry a root-aligned pose3d and image-scaled depth
    labels; set_2d samples carry neither.  Samples flagged excluded failed
    the depth-scale fit and must not be trained on.
    """

    pose2d: CanonicalPose2D
    pose3d: CanonicalPose3D | None
    depth: np.ndarray | None
    source: str
    image_ref: str = ""
    excluded: bool = False
    exclusion_reason: str | None = None

    def __post_init__(self):
        if self.source not in ("set_2d", "set_3d"):
            raise HarmonizeError(f"unknown source {self.source!r}")
        if self.depth is not None:
            self.depth = np.asarray(self.depth, dtype=np.float64)
            if self.depth.shape != (NUM_JOINTS,):
                raise HarmonizeError("depth labels must have shape (16,)")
        if not self.excluded:
            has_3d = self.pose3d is not None and self.depth is not None
            if (self.source == "set_3d") != has_3d:
                raise HarmonizeError(
                    "source set_3d requires pose3d and depth labels (and set_2d forbids them)"
                )
        if self.pose3d is not None and self.pose3d.frame != "root_aligned_mm":
            raise HarmonizeError("harmonized pose3d must be root-aligned")


# ---------------------------------------------------------------------------
# converters


def _get(record: RawRecord, name: str) -> np.ndarray:
    try:
        return record.joints[name]
    except KeyError:
        raise MissingJointError(f"{record.dataset_id} record is missing joint {name!r}") from None


def _finite_or_error(record: RawRecord, name: str, value: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise HarmonizeError(f"{record.dataset_id} joint {name!r} has non-finite coordinates")
    return value


def convert_mpii(record: RawRecord) -> CanonicalPose2D:
    """MPII is already the canonical format; map joints by name."""
    if record.dataset_id != "MPII":
        raise HarmonizeError(f"expected MPII record, got {record.dataset_id}")
    coords = np.zeros((NUM_JOINTS, 2))
    for name in JOINT_NAMES:
        coords[canonical_joint_index(name)] = _finite_or_error(record, name, _get(record, name))
    return CanonicalPose2D(coords)


def convert_lsp(record: RawRecord) -> CanonicalPose2D:
    """LSP 14 joints -> canonical; thorax and pelvis are shoulder/hip midpoints."""
    if record.dataset_id != "LSP":
        raise HarmonizeError(f"expected LSP record, got {record.dataset_id}")
    coords = np.zeros((NUM_JOINTS, 2))
    for name in LSP_JOINTS:
        coords[canonical_joint_index(name)] = _finite_or_error(record, name, _get(record, name))
    coords[canonical_joint_index("thorax")] = 0.5 * (
        _get(record, "l_shoulder") + _get(record, "r_shoulder")
    )
    coords[canonical_joint_index("pelvis")] = 0.5 * (_get(record, "l_hip") + _get(record, "r_hip"))
    return CanonicalPose2D(coords)


# FLIC source joint feeding each canonical joint; every other source joint
# (eyes, ears, segment midpoints) has no canonical counterpart and is dropped.
_FLIC_MAP = {name: name for name in JOINT_NAMES if name in FLIC_JOINTS}
_FLIC_MAP.update({"thorax": "mid_torso", "neck": "mid_shoulder", "head_top": "nose"})


def convert_flic(record: RawRecord) -> CanonicalPose2D:
    """FLIC 29 joints -> canonical; NaN coordinates become (0, 0) with visibility false."""
    if record.dataset_id != "FLIC":
        raise HarmonizeError(f"expected FLIC record, got {record.dataset_id}")
    coords = np.zeros((NUM_JOINTS, 2))
    visibility = np.ones(NUM_JOINTS, dtype=bool)
    for canonical, source in _FLIC_MAP.items():
        idx = canonical_joint_index(canonical)
        value = _get(record, source)
        if np.any(np.isnan(value)):
            visibility[idx] = False
        else:
            coords[idx] = value
    return CanonicalPose2D(coords, visibility)


def convert_h36m(record: RawRecord) -> CanonicalPose3D:
    """H36M 17 joints -> canonical camera-frame pose; thorax <- spine."""
    if record.dataset_id != "H36M":
        raise HarmonizeError(f"expected H36M record, got {record.dataset_id}")
    coords = np.zeros((NUM_JOINTS, 3))
    for name in JOINT_NAMES:
        source = "spine" if name == "thorax" else name
        coords[canonical_joint_index(name)] = _finite_or_error(record, source, _get(record, source))
    return CanonicalPose3D(coords, frame="camera_mm")


def convert_mpii3d(record: RawRecord) -> CanonicalPose3D:
    """MPII3D -> canonical; thorax <- the spine joint nearest the shoulder midpoint."""
    if record.dataset_id != "MPII3D":
        raise HarmonizeError(f"expected MPII3D record, got {record.dataset_id}")
    spine_names = sorted(n for n in record.joints if n.startswith("spine"))
    if not spine_names:
        raise MissingJointError("MPII3D record has no spine joints to infer the thorax from")
    mid_shoulder = 0.5 * (_get(record, "l_shoulder") + _get(record, "r_shoulder"))
    nearest = min(spine_names, key=lambda n: float(np.linalg.norm(record.joints[n] - mid_shoulder)))
    coords = np.zeros((NUM_JOINTS, 3))
    for name in JOINT_NAMES:
        source = nearest if name == "thorax" else name
        coords[canonical_joint_index(name)] = _finite_or_error(record, source, _get(record, source))
    return CanonicalPose3D(coords, frame="camera_mm")


def convert_op(record: RawRecord) -> CanonicalPose3D:
    """OP 15 joints -> canonical; thorax <- shoulder midpoint, head_top <- neck."""
    if record.dataset_id != "OP":
        raise HarmonizeError(f"expected OP record, got {record.dataset_id}")
    coords = np.zeros((NUM_JOINTS, 3))
    for name in JOINT_NAMES:
        if name == "thorax":
            value = 0.5 * (_get(record, "l_shoulder") + _get(record, "r_shoulder"))
        elif name == "head_top":
            value = _get(record, "neck")
        else:
            value = _get(record, name)
        coords[canonical_joint_index(name)] = _finite_or_error(record, name, value)
    return CanonicalPose3D(coords, frame="camera_mm")


_CONVERTERS = {
    "MPII": convert_mpii,
    "LSP": convert_lsp,
    "FLIC": convert_flic,
    "H36M": convert_h36m,
    "MPII3D": convert_mpii3d,
    "OP": convert_op,
}


# ---------------------------------------------------------------------------
# 3D alignment and depth scaling


def root_align(pose: CanonicalPose3D) -> CanonicalPose3D:
    """Subtract the pelvis coordinate from every joint (idempotent)."""
    if pose.frame not in ("camera_mm", "root_aligned_mm"):
        raise HarmonizeError(f"cannot root-align a {pose.frame!r} pose")
    coords = pose.coords - pose.coords[ROOT]
    return CanonicalPose3D(coords, frame="root_aligned_mm", visibility=pose.visibility.copy())


def solve_depth_scale(pose3d: CanonicalPose3D, pose2d: CanonicalPose2D) -> float:
    """Least-squares scale s (pixels per mm) between a root-aligned 3D pose and its 2D pose.

        s = sum_j <p2d_j - p2d_root, xy_j> / sum_j ||xy_j||^2

    over visible non-root joints, where xy_j is the root-aligned 3D pose's
    image-plane component.  The root-centred 2D pose and the 3D xy projection
    differ by exactly this scale under an orthographic camera.  A negative
    result is returned as-is; the caller decides how to flag it.
    """
    if pose3d.frame != "root_aligned_mm":
        raise HarmonizeError("solve_depth_scale needs a root-aligned 3D pose")
    usable = pose2d.visibility & pose3d.visibility
    if not usable[ROOT]:
        raise DegenerateScaleError("root joint is not visible; cannot centre the 2D pose")
    mask = usable.copy()
    mask[ROOT] = False
    if int(mask.sum()) < 2:
        raise DegenerateScaleError("need at least 2 visible non-root joints")
    d2d = pose2d.coords[mask] - pose2d.coords[ROOT]
    xy = pose3d.coords[mask, :2]
    denom = float((xy * xy).sum())
    if denom < 1e-12:
        raise DegenerateScaleError("all 3D image-plane offsets are at the root")
    return float((d2d * xy).sum() / denom)


def scale_depth(pose3d: CanonicalPose3D, s: float) -> np.ndarray:
    """Image-scaled depth labels depth_j = z_j * s for a root-aligned pose."""
    if pose3d.frame != "root_aligned_mm":
        raise HarmonizeError("scale_depth needs a root-aligned 3D pose")
    if not (math.isfinite(s) and s > 0):
        raise HarmonizeError(f"depth scale must be finite and positive, got {s}")
    return pose3d.coords[:, 2] * s


def project_pinhole(pose: CanonicalPose3D, camera: dict) -> CanonicalPose2D:
    """Project a camera-frame pose: u = fx x/z + cx, v = fy y/z + cy.

    Joints landing outside [0, width) x [0, height) are marked invisible when
    the camera block carries frame bounds.
    """
    if pose.frame != "camera_mm":
        raise HarmonizeError("projection needs a camera_mm pose")
    for key in ("fx", "fy", "cx", "cy"):
        if key not in camera:
            raise HarmonizeError(f"camera block is missing {key!r}")
    z = pose.coords[:, 2]
    if np.any(z <= 0):
        raise HarmonizeError("cannot project joints with nonpositive depth")
    u = camera["fx"] * pose.coords[:, 0] / z + camera["cx"]
    v = camera["fy"] * pose.coords[:, 1] / z + camera["cy"]
    coords = np.stack([u, v], axis=1)
    visibility = pose.visibility.copy()
    if "width" in camera and "height" in camera:
        in_frame = (u >= 0) & (u < camera["width"]) & (v >= 0) & (v < camera["height"])
        visibility &= in_frame
    return CanonicalPose2D(coords, visibility)


def _pose2d_from_joints2d(joints2d: dict[str, np.ndarray]) -> CanonicalPose2D:
    coords = np.zeros((NUM_JOINTS, 2))
    for name in JOINT_NAMES:
        if name not in joints2d:
            raise MissingJointError(f"joints2d block is missing canonical joint {name!r}")
        coords[canonical_joint_index(name)] = joints2d[name]
    return CanonicalPose2D(coords)


def harmonize_record(record: RawRecord, camera: dict | None = None) -> HarmonizedSample:
    """Convert one raw record into a HarmonizedSample.

    2D datasets yield a set_2d sample.  3D datasets additionally root-align
    the pose, recover the 2D pose (explicit joints2d, else pinhole projection
    through the camera), solve the depth scale, and emit depth labels; a
    degenerate or negative scale flags the sample excluded-from-training.
    """
    converter = _CONVERTERS[record.dataset_id]
    if record.dataset_id in DATASETS_2D:
        return HarmonizedSample(
            pose2d=converter(record), pose3d=None, depth=None,
            source="set_2d", image_ref=record.image_ref,
        )

    pose_cam = converter(record)
    cam = camera if camera is not None else record.camera
    if record.joints2d is not None:
        pose2d = _pose2d_from_joints2d(record.joints2d)
    elif cam is not None:
        pose2d = project_pinhole(pose_cam, cam)
    else:
        raise HarmonizeError(
            f"{record.dataset_id} record needs a camera block or explicit joints2d"
        )
    pose3d = root_align(pose_cam)
    pose3d.visibility = pose2d.visibility.copy()

    try:
        s = solve_depth_scale(pose3d, pose2d)
    except DegenerateScaleError as err:
        return HarmonizedSample(
            pose2d=pose2d, pose3d=pose3d, depth=None, source="set_3d",
            image_ref=record.image_ref, excluded=True, exclusion_reason=str(err),
        )
    if s <= 0:
        return HarmonizedSample(
            pose2d=pose2d, pose3d=pose3d, depth=None, source="set_3d",
            image_ref=record.image_ref, excluded=True,
            exclusion_reason=f"negative depth scale ({s:.6g})",
        )
    return HarmonizedSample(
        pose2d=pose2d, pose3d=pose3d, depth=scale_depth(pose3d, s),
        source="set_3d", image_ref=record.image_ref,
    )


# ---------------------------------------------------------------------------
# JSON-lines I/O (NaN is encoded as null)


def _num(value):
    if value is None:
        return math.nan
    return float(value)


def _jsonable(value: float):
    return None if math.isnan(value) else value


def raw_record_to_json(record: RawRecord) -> str:
    doc = {
        "dataset": record.dataset_id,
        "split": record.split,
        "image": record.image_ref,
        "joints": [
            {
                "name": name,
                "x": _jsonable(c[0]),
                "y": _jsonable(c[1]),
                **({"z": _jsonable(c[2])} if c.shape[0] == 3 else {}),
            }
            for name, c in record.joints.items()
        ],
    }
    if record.camera is not None:
        doc["camera"] = record.camera
    if record.joints2d is not None:
        doc["joints2d"] = [
            {"name": n, "x": float(c[0]), "y": float(c[1])} for n, c in record.joints2d.items()
        ]
    return json.dumps(doc, sort_keys=True)


def raw_record_from_dict(doc: dict) -> RawRecord:
    dataset = doc.get("dataset")
    if dataset is None:
        raise HarmonizeError("record is missing the 'dataset' field")
    joints_field = doc.get("joints")
    if not isinstance(joints_field, list):
        raise HarmonizeError("record is missing the 'joints' array")
    is_3d = dataset in DATASETS_3D
    joints = {}
    for entry in joints_field:
        name = entry.get("name")
        if name is None:
            raise HarmonizeError("joint entry is missing 'name'")
        if is_3d:
            if "z" not in entry:
                raise HarmonizeError(f"3D joint {name!r} is missing 'z'")
            joints[name] = np.array([_num(entry.get("x")), _num(entry.get("y")), _num(entry["z"])])
        else:
            joints[name] = np.array([_num(entry.get("x")), _num(entry.get("y"))])
    joints2d = None
    if "joints2d" in doc:
        joints2d = {
            e["name"]: np.array([float(e["x"]), float(e["y"])]) for e in doc["joints2d"]
        }
    return RawRecord(
        dataset_id=dataset,
        joints=joints,
        image_ref=doc.get("image", ""),
        split=doc.get("split", "train"),
        camera=doc.get("camera"),
        joints2d=joints2d,
    )


def read_raw_records(path: str | Path) -> list[RawRecord]:
    """Parse a JSON-lines export; errors carry the offending 1-based line number."""
    records = []
    with open(path) as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as err:
                raise RecordParseError(line_number, f"invalid JSON ({err.msg})") from None
            try:
                records.append(raw_record_from_dict(doc))
            except (HarmonizeError, KeyError, TypeError, ValueError) as err:
                raise RecordParseError(line_number, str(err)) from None
    return records


def write_raw_records(records: list[RawRecord], path: str | Path) -> None:
    with open(path, "w") as fh:
        for record in records:
            fh.write(raw_record_to_json(record) + "\n")


def harmonized_to_json(sample: HarmonizedSample) -> str:
    doc = {
        "source": sample.source,
        "image": sample.image_ref,
        "pose2d": [
            [float(x), float(y), int(v)]
            for (x, y), v in zip(sample.pose2d.coords, sample.pose2d.visibility)
        ],
        "pose3d": None if sample.pose3d is None else [[float(c) for c in row] for row in sample.pose3d.coords],
        "depth": None if sample.depth is None else [float(d) for d in sample.depth],
        "excluded": sample.excluded,
    }
    if sample.exclusion_reason:
        doc["exclusion_reason"] = sample.exclusion_reason
    return json.dumps(doc, sort_keys=True)


def harmonized_from_dict(doc: dict) -> HarmonizedSample:
    pose2d_rows = doc["pose2d"]
    coords = np.array([[r[0], r[1]] for r in pose2d_rows])
    vis = np.array([bool(r[2]) for r in pose2d_rows])
    pose2d = CanonicalPose2D(coords, vis)
    pose3d = None
    if doc.get("pose3d") is not None:
        pose3d = CanonicalPose3D(
            np.array(doc["pose3d"]), frame="root_aligned_mm", visibility=vis.copy()
        )
    depth = None if doc.get("depth") is None else np.array(doc["depth"], dtype=np.float64)
    return HarmonizedSample(
        pose2d=pose2d,
        pose3d=pose3d,
        depth=depth,
        source=doc["source"],
        image_ref=doc.get("image", ""),
        excluded=bool(doc.get("excluded", False)),
        exclusion_reason=doc.get("exclusion_reason"),
    )


def read_harmonized(path: str | Path) -> list[HarmonizedSample]:
    samples = []
    with open(path) as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                samples.append(harmonized_from_dict(json.loads(line)))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as err:
                raise RecordParseError(line_number, str(err)) from None
    return samples


def write_harmonized(samples: list[HarmonizedSample], path: str | Path) -> None:
    with open(path, "w") as fh:
        for sample in samples:
            fh.write(harmonized_to_json(sample) + "\n")

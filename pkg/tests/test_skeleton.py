import numpy as np
import pytest

from pose3d.skeleton import (
    BONES,
    DEFAULT_SKELETON,
    GROUP_BONES,
    JOINT_NAMES,
    NUM_JOINTS,
    ROOT,
    CanonicalPose2D,
    CanonicalPose3D,
    CanonicalSkeleton,
    UnknownJointError,
    bone_length,
    canonical_joint_index,
    default_bone_groups,
    load_reference_lengths,
    rest_pose,
)


class TestCanonicalOrdering:
    def test_fixed_indices(self):
        assert canonical_joint_index("pelvis") == 6
        assert canonical_joint_index("thorax") == 7
        assert canonical_joint_index("head_top") == 9

    def test_all_names_round_trip(self):
        for i, name in enumerate(JOINT_NAMES):
            assert canonical_joint_index(name) == i

    def test_unknown_name_lists_valid_ones(self):
        with pytest.raises(UnknownJointError, match="pelvis"):
            canonical_joint_index("hip_center")


class TestSkeletonInvariants:
    def test_default_is_valid(self):
        skel = DEFAULT_SKELETON
        assert len(skel.joint_names) == 16
        assert len(skel.bone_edges) == 15
        assert skel.joint_names[skel.root_index] == "pelvis"

    def test_rejects_disconnected_graph(self):
        edges = list(DEFAULT_SKELETON.bone_edges)
        edges[0] = (1, 2)  # duplicate edge orphaning joint 0 while keeping 15 edges
        with pytest.raises(ValueError):
            CanonicalSkeleton(bone_edges=tuple(edges))

    def test_rejects_wrong_edge_count(self):
        with pytest.raises(ValueError, match="tree"):
            CanonicalSkeleton(bone_edges=DEFAULT_SKELETON.bone_edges[:-1])


class TestPoseContainers:
    def test_pose2d_zeroes_invisible(self):
        coords = np.ones((16, 2))
        vis = np.ones(16, bool)
        vis[3] = False
        pose = CanonicalPose2D(coords, vis)
        assert pose.coords[3, 0] == 0.0 and pose.coords[3, 1] == 0.0
        assert pose.coords[4, 0] == 1.0

    def test_pose2d_shape_check(self):
        with pytest.raises(ValueError):
            CanonicalPose2D(np.zeros((15, 2)))

    def test_pose3d_root_aligned_requires_zero_root(self):
        coords = np.ones((16, 3))
        with pytest.raises(ValueError, match="origin"):
            CanonicalPose3D(coords, frame="root_aligned_mm")

    def test_pose3d_rejects_unknown_frame(self):
        with pytest.raises(ValueError, match="frame"):
            CanonicalPose3D(np.zeros((16, 3)), frame="world")


class TestBoneLength:
    def _pose_with(self, a, b, pa, pb):
        coords = np.zeros((16, 3))
        coords[a] = pa
        coords[b] = pb
        return CanonicalPose3D(coords, frame="camera_mm")

    def test_coincident_joints(self):
        pose = self._pose_with(0, 1, (0, 0, 0), (0, 0, 0))
        assert bone_length(pose, (0, 1)) == 0.0

    def test_hand_evaluated_345(self):
        pose = self._pose_with(0, 1, (0, 0, 0), (3, 4, 0))
        assert bone_length(pose, (0, 1)) == pytest.approx(5.0, abs=1e-12)

    def test_hand_evaluated_sqrt3(self):
        pose = self._pose_with(2, 3, (1, 1, 1), (2, 2, 2))
        assert bone_length(pose, (2, 3)) == pytest.approx(np.sqrt(3.0), abs=1e-9)

    def test_symmetric_and_translation_invariant(self, rng):
        coords = rng.normal(0, 100, (16, 3))
        pose = CanonicalPose3D(coords, frame="camera_mm")
        shifted = CanonicalPose3D(coords + np.array([5.0, -3.0, 11.0]), frame="camera_mm")
        for edge in DEFAULT_SKELETON.bone_edges:
            a, b = edge
            assert bone_length(pose, edge) == pytest.approx(bone_length(pose, (b, a)), abs=0)
            assert bone_length(pose, edge) == pytest.approx(bone_length(shifted, edge), rel=1e-12)

    def test_invalid_edge(self):
        pose = CanonicalPose3D(np.zeros((16, 3)), frame="camera_mm")
        with pytest.raises(ValueError):
            bone_length(pose, (0, 16))

    def test_rejects_image_scaled_frame(self):
        pose = CanonicalPose3D(np.zeros((16, 3)), frame="image_scaled")
        with pytest.raises(ValueError):
            bone_length(pose, (0, 1))


class TestBoneGroups:
    def test_four_disjoint_groups(self, bone_groups):
        assert [g.name for g in bone_groups] == ["arms", "legs", "shoulders", "hips"]
        all_bones = [e for g in bone_groups for e in g.bones]
        assert len(all_bones) == len(set(all_bones))
        for g in bone_groups:
            assert len(g.bones) >= 2
            assert all(v > 0 for v in g.canonical_lengths.values())

    def test_arm_lengths_from_reference_pose(self, bone_groups):
        arms = bone_groups[0]
        lengths = sorted(arms.canonical_lengths.values())
        assert lengths == pytest.approx([250.0, 250.0, 280.0, 280.0], abs=1e-9)

    def test_symmetric_reference_pose(self, bone_groups):
        for group in bone_groups:
            by_name = {
                name: group.canonical_lengths[BONES[name]]
                for name in GROUP_BONES[group.name]
            }
            for name, value in by_name.items():
                mirrored = ("l_" + name[2:]) if name.startswith("r_") else ("r_" + name[2:])
                assert value == pytest.approx(by_name[mirrored], abs=1e-9)

    def test_zero_length_bone_rejected(self, reference_pose):
        coords = reference_pose.coords.copy()
        coords[canonical_joint_index("r_wrist")] = coords[canonical_joint_index("r_elbow")]
        broken = CanonicalPose3D(coords, frame="root_aligned_mm")
        with pytest.raises(ValueError, match="zero-length"):
            default_bone_groups(DEFAULT_SKELETON, broken)

    def test_partially_visible_reference_rejected(self, reference_pose):
        vis = np.ones(16, bool)
        vis[0] = False
        pose = CanonicalPose3D(reference_pose.coords.copy(), "root_aligned_mm", vis)
        with pytest.raises(ValueError, match="visible"):
            default_bone_groups(DEFAULT_SKELETON, pose)


class TestReferenceSkeletonFile:
    def test_shipped_file_loads(self):
        lengths = load_reference_lengths()
        assert set(lengths) == set(BONES)
        assert lengths["r_upper_arm"] == 280.0
        assert lengths["r_forearm"] == 250.0

    def test_rest_pose_matches_lengths(self, reference_pose):
        lengths = load_reference_lengths()
        for name, edge in BONES.items():
            assert bone_length(reference_pose, edge) == pytest.approx(lengths[name], abs=1e-9)

    def test_override_file(self, tmp_path):
        import json

        lengths = load_reference_lengths()
        lengths["spine"] = 500.0
        path = tmp_path / "custom.json"
        path.write_text(json.dumps({"bones": lengths}))
        loaded = load_reference_lengths(path)
        assert loaded["spine"] == 500.0

    def test_missing_bone_rejected(self, tmp_path):
        import json

        lengths = load_reference_lengths()
        del lengths["spine"]
        path = tmp_path / "broken.json"
        path.write_text(json.dumps({"bones": lengths}))
        with pytest.raises(ValueError, match="spine"):
            load_reference_lengths(path)

    def test_rest_pose_midpoint_consistency(self, reference_pose):
        c = reference_pose.coords
        thorax = c[canonical_joint_index("thorax")]
        shoulders = 0.5 * (c[canonical_joint_index("l_shoulder")] + c[canonical_joint_index("r_shoulder")])
        np.testing.assert_allclose(thorax, shoulders, atol=1e-12)
        assert np.all(c[ROOT] == 0.0)

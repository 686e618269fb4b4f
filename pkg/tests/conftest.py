import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pose3d.skeleton import DEFAULT_SKELETON, default_bone_groups, load_reference_lengths, rest_pose


@pytest.fixture(scope="session")
def reference_pose():
    return rest_pose(load_reference_lengths())


@pytest.fixture(scope="session")
def bone_groups(reference_pose):
    return default_bone_groups(DEFAULT_SKELETON, reference_pose)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

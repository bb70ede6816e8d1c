import numpy as np
import pytest

from oneshot_manip.se3 import Pose


@pytest.fixture()
def rng():
    return np.random.default_rng(20260808)


def random_pose(rng, max_trans: float = 1.0) -> Pose:
    axis = rng.normal(size=3)
    while np.linalg.norm(axis) < 1e-6:
        axis = rng.normal(size=3)
    return Pose.from_axis_angle(axis, rng.uniform(0.0, np.pi),
                                rng.uniform(-max_trans, max_trans, 3))

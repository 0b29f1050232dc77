"""Shared helpers for the test suite."""

import numpy as np
import pytest

from plba.geometry import CameraIntrinsics, Pose, so3_exp


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def intrinsics():
    return CameraIntrinsics(fu=500.0, fv=500.0, cu=320.0, cv=240.0,
                            baseline=0.5, width=640, height=480)


def random_pose(rng, rot_scale=0.5, trans_scale=2.0) -> Pose:
    """Pose with a bounded random rotation and translation."""
    return Pose(so3_exp(rng.normal(scale=rot_scale, size=3)),
                rng.normal(scale=trans_scale, size=3))


def random_line(rng):
    """Well-conditioned finite line from two separated random points."""
    from plba.geometry import line_from_endpoints
    while True:
        p1 = rng.normal(scale=2.0, size=3)
        p2 = rng.normal(scale=2.0, size=3)
        if np.linalg.norm(p2 - p1) > 0.5:
            return line_from_endpoints(p1, p2)

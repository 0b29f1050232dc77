"""Trajectory metrics (RPE, ATE, drift) and TUM-format I/O."""

import numpy as np
import pytest

from plba.evaluation import (Trajectory, associate, ate, ate_rmse, final_drift,
                             read_trajectory, read_tum, rotation_angle,
                             rpe_rmse, trajectory_from_text,
                             trajectory_from_world_to_camera,
                             trajectory_to_text, write_trajectory, write_tum)
from plba.geometry import Pose, so3_exp

from conftest import random_pose


def straight_line_trajectory(n, step=1.0):
    """Camera-in-world poses marching along +x with identity orientation."""
    stamps = np.arange(n, dtype=float)
    poses = tuple(Pose(np.eye(3), np.array([step * i, 0.0, 0.0]))
                  for i in range(n))
    return Trajectory(stamps, poses)


def transformed(traj: Trajectory, G: Pose) -> Trajectory:
    return Trajectory(traj.stamps, tuple(G.compose(p) for p in traj.poses))


# ---------------------------------------------------------------------------
# Trajectory container
# ---------------------------------------------------------------------------

def test_trajectory_sorts_by_timestamp():
    t = Trajectory(np.array([2.0, 0.0, 1.0]),
                   (Pose(np.eye(3), [2.0, 0, 0]), Pose(np.eye(3), [0.0, 0, 0]),
                    Pose(np.eye(3), [1.0, 0, 0])))
    np.testing.assert_array_equal(t.stamps, [0.0, 1.0, 2.0])
    np.testing.assert_allclose(t.positions()[:, 0], [0.0, 1.0, 2.0])


def test_trajectory_rejects_duplicate_stamps():
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 1.0, 1.0]),
                   tuple(Pose.identity() for _ in range(3)))


def test_trajectory_length_mismatch():
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 1.0]), (Pose.identity(),))


def test_trajectory_from_world_to_camera_inverts():
    T = Pose(so3_exp([0.1, 0.2, -0.1]), np.array([1.0, 2.0, 3.0]))
    traj = trajectory_from_world_to_camera([0.0], [T])
    np.testing.assert_allclose(traj.poses[0].matrix(),
                               T.inverse().matrix(), atol=1e-14)
    # the stored translation is then the camera centre in the world
    np.testing.assert_allclose(traj.poses[0].translation, T.center, atol=1e-14)


# ---------------------------------------------------------------------------
# association
# ---------------------------------------------------------------------------

def test_associate_exact_match():
    pairs = associate([0.0, 0.1, 0.2], [0.0, 0.1, 0.2])
    assert pairs == [(0, 0), (1, 1), (2, 2)]


def test_associate_within_tolerance():
    pairs = associate([0.0, 0.1, 0.2], [0.005, 0.105, 0.205], tol=0.02)
    assert pairs == [(0, 0), (1, 1), (2, 2)]
    assert associate([0.0, 0.1], [0.5, 0.6], tol=0.02) == []


def test_associate_prefers_nearest():
    # 0.10 is closer to 0.11 than to 0.08; one-to-one matching holds
    pairs = associate([0.10], [0.08, 0.11], tol=0.05)
    assert pairs == [(0, 1)]


def test_associate_is_one_to_one():
    pairs = associate([0.0, 0.001], [0.0005], tol=0.01)
    assert len(pairs) == 1


# ---------------------------------------------------------------------------
# RPE
# ---------------------------------------------------------------------------

def test_rpe_zero_for_identical_trajectories():
    t = straight_line_trajectory(10)
    assert rpe_rmse(t, t) == (0.0, 0.0)


def test_rpe_invariant_to_constant_offset():
    gt = straight_line_trajectory(10)
    offset = Pose(np.eye(3), np.array([5.0, -3.0, 2.0]))
    est = transformed(gt, offset)
    trans, rot = rpe_rmse(est, gt)
    assert trans < 1e-12 and rot < 1e-12


def test_rpe_invariant_to_rigid_transform_of_both():
    rng = np.random.default_rng(0)
    stamps = np.arange(8, dtype=float)
    gt = Trajectory(stamps, tuple(random_pose(rng) for _ in range(8)))
    est = Trajectory(stamps, tuple(
        Pose(so3_exp(rng.normal(scale=0.1, size=3)) @ p.rotation,
             p.translation + rng.normal(scale=0.1, size=3))
        for p in gt.poses))
    G = random_pose(rng)
    a = rpe_rmse(est, gt)
    b = rpe_rmse(transformed(est, G), transformed(gt, G))
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_rpe_closed_form_single_step_error():
    # offsetting the tail of the estimate perturbs exactly one relative
    # motion by 0.1 m; over N pairs the RMSE is 0.1/sqrt(N)
    n = 11  # N = 10 pairs
    gt = straight_line_trajectory(n)
    poses = list(gt.poses)
    for i in range(5, n):
        poses[i] = Pose(np.eye(3), poses[i].translation + [0.0, 0.1, 0.0])
    est = Trajectory(gt.stamps, tuple(poses))
    trans, rot = rpe_rmse(est, gt)
    assert trans == pytest.approx(0.1 / np.sqrt(10.0), abs=1e-12)
    assert rot == pytest.approx(0.0, abs=1e-12)


def test_rpe_closed_form_rotation():
    # one relative rotation off by 0.2 rad over N pairs
    n = 6
    gt = straight_line_trajectory(n)
    R = so3_exp([0.0, 0.0, 0.2])
    poses = [Pose(R, p.translation) if i >= 3 else p
             for i, p in enumerate(gt.poses)]
    est = Trajectory(gt.stamps, tuple(poses))
    _, rot = rpe_rmse(est, gt)
    assert rot == pytest.approx(0.2 / np.sqrt(5.0), abs=1e-12)


def test_rpe_delta_greater_than_one():
    gt = straight_line_trajectory(10)
    est = transformed(gt, Pose(np.eye(3), [1.0, 0.0, 0.0]))
    trans, _ = rpe_rmse(est, gt, delta=3)
    assert trans < 1e-12
    with pytest.raises(ValueError):
        rpe_rmse(gt, gt, delta=0)
    with pytest.raises(ValueError):
        rpe_rmse(gt, gt, delta=10)  # needs at least delta+1 matches


def test_rpe_no_association_raises():
    a = straight_line_trajectory(5)
    b = Trajectory(a.stamps + 100.0, a.poses)
    with pytest.raises(ValueError):
        rpe_rmse(a, b)


# ---------------------------------------------------------------------------
# ATE and drift
# ---------------------------------------------------------------------------

def test_ate_zero_for_identical():
    t = straight_line_trajectory(7)
    assert ate(t, t) == 0.0
    assert ate_rmse is ate


def test_ate_closed_form_single_offset():
    n = 16
    gt = straight_line_trajectory(n)
    poses = list(gt.poses)
    poses[4] = Pose(np.eye(3), poses[4].translation + [0.0, 0.0, 1.0])
    est = Trajectory(gt.stamps, tuple(poses))
    assert ate(est, gt) == pytest.approx(1.0 / np.sqrt(n), abs=1e-12)


def test_ate_alignment_removes_rigid_transform():
    rng = np.random.default_rng(1)
    stamps = np.arange(12, dtype=float)
    gt = Trajectory(stamps, tuple(random_pose(rng) for _ in range(12)))
    G = Pose(so3_exp([0.3, -0.2, 0.5]), np.array([4.0, -2.0, 1.0]))
    est = transformed(gt, G)
    assert ate(est, gt, align=False) > 1.0
    assert ate(est, gt, align=True) < 1e-9


def test_ate_alignment_invariance_of_noisy_estimate():
    rng = np.random.default_rng(2)
    gt = straight_line_trajectory(20)
    est = Trajectory(gt.stamps, tuple(
        Pose(p.rotation, p.translation + rng.normal(scale=0.05, size=3))
        for p in gt.poses))
    G = Pose(so3_exp([0.1, 0.2, 0.3]), np.array([1.0, 2.0, 3.0]))
    a = ate(est, gt, align=True)
    b = ate(transformed(est, G), gt, align=True)
    assert a == pytest.approx(b, abs=1e-9)


def test_final_drift():
    gt = straight_line_trajectory(5)
    poses = list(gt.poses)
    poses[-1] = Pose(np.eye(3), poses[-1].translation + [0.3, 0.4, 0.0])
    est = Trajectory(gt.stamps, tuple(poses))
    assert final_drift(est, gt) == pytest.approx(0.5, abs=1e-12)


def test_rotation_angle():
    assert rotation_angle(np.eye(3)) == 0.0
    assert rotation_angle(so3_exp([0.0, 0.3, 0.0])) == pytest.approx(0.3,
                                                                     abs=1e-12)


# ---------------------------------------------------------------------------
# TUM I/O
# ---------------------------------------------------------------------------

def test_tum_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    traj = Trajectory(np.arange(6) * 0.1,
                      tuple(random_pose(rng) for _ in range(6)))
    path = tmp_path / "traj.tum"
    write_tum(traj, path)
    back = read_tum(path)
    np.testing.assert_allclose(back.stamps, traj.stamps, atol=0.0)
    for a, b in zip(traj.poses, back.poses):
        np.testing.assert_allclose(a.matrix(), b.matrix(), atol=1e-9)
    assert write_trajectory is write_tum and read_trajectory is read_tum


def test_tum_text_format():
    traj = Trajectory(np.array([1.5]), (Pose(np.eye(3), [1.0, 2.0, 3.0]),))
    text = trajectory_to_text(traj)
    lines = text.splitlines()
    assert lines[0] == "# timestamp tx ty tz qx qy qz qw"
    fields = lines[1].split()
    assert len(fields) == 8
    assert float(fields[0]) == 1.5
    assert [float(f) for f in fields[1:4]] == [1.0, 2.0, 3.0]
    assert [float(f) for f in fields[4:8]] == [0.0, 0.0, 0.0, 1.0]


def test_tum_quaternion_sign_is_canonical(rng):
    traj = Trajectory(np.arange(20) * 1.0,
                      tuple(random_pose(rng, rot_scale=2.0) for _ in range(20)))
    for line in trajectory_to_text(traj).splitlines()[1:]:
        assert float(line.split()[7]) >= 0.0


def test_tum_malformed_line_reports_number():
    text = "# header\n0.0 0 0 0 0 0 0 1\n1.0 0 0 0\n"
    with pytest.raises(ValueError, match="line 3"):
        trajectory_from_text(text)
    with pytest.raises(ValueError, match="line 2"):
        trajectory_from_text("# h\n0.0 a 0 0 0 0 0 1\n")


def test_tum_empty_file(tmp_path):
    path = tmp_path / "empty.tum"
    path.write_text("# only a header\n")
    traj = read_tum(path)
    assert len(traj) == 0


def test_tum_skips_comments_and_blanks():
    text = ("# c\n\n0.0 0.0 0.0 0.0 0.0 0.0 0.0 1.0\n"
            "# mid comment\n1.0 1.0 0.0 0.0 0.0 0.0 0.0 1.0\n")
    traj = trajectory_from_text(text)
    assert len(traj) == 2

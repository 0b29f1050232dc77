"""Trajectory error metrics: relative pose error and absolute trajectory error.

Trajectories are stored in the TUM text format, one ``timestamp tx ty tz qx
qy qz qw`` row per frame, with poses expressed as camera-in-world transforms
(the position of the camera and its orientation in the world frame).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import Pose


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped camera-in-world poses, sorted by timestamp."""

    stamps: np.ndarray
    poses: tuple

    def __post_init__(self):
        stamps = np.asarray(self.stamps, dtype=float)
        if stamps.ndim != 1 or len(stamps) != len(self.poses):
            raise ValueError("stamps and poses must have matching lengths")
        order = np.argsort(stamps, kind="stable")
        stamps = stamps[order]
        if len(stamps) > 1 and np.min(np.diff(stamps)) <= 0.0:
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "stamps", stamps)
        object.__setattr__(self, "poses", tuple(self.poses[i] for i in order))
        self.stamps.setflags(write=False)

    def __len__(self):
        return len(self.poses)

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses])


def trajectory_from_world_to_camera(stamps, poses) -> Trajectory:
    """Build a trajectory from world->camera poses by inverting each one."""
    return Trajectory(np.asarray(stamps, dtype=float),
                      tuple(p.inverse() for p in poses))


def trajectory_to_text(traj: Trajectory) -> str:
    rows = ["# timestamp tx ty tz qx qy qz qw"]
    for stamp, pose in zip(traj.stamps, traj.poses):
        q = Rotation.from_matrix(pose.rotation).as_quat()
        if q[3] < 0.0:
            q = -q
        vals = [stamp, *pose.translation, *q]
        rows.append(" ".join(repr(float(v)) for v in vals))
    return "\n".join(rows) + "\n"


def write_tum(traj: Trajectory, path):
    with open(path, "w") as f:
        f.write(trajectory_to_text(traj))


def trajectory_from_text(text: str) -> Trajectory:
    stamps, poses = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split()
        if len(parts) != 8:
            raise ValueError(f"line {lineno}: expected 8 fields, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise ValueError(f"line {lineno}: non-numeric field") from None
        stamps.append(vals[0])
        R = Rotation.from_quat(vals[4:8]).as_matrix()
        poses.append(Pose(R, np.array(vals[1:4])))
    return Trajectory(np.array(stamps), tuple(poses))


def read_tum(path) -> Trajectory:
    with open(path) as f:
        return trajectory_from_text(f.read())


def associate(stamps_a, stamps_b, tol: float = 0.02):
    """Greedy one-to-one matching of timestamps within ``tol`` seconds.

    Returns index pairs ``(i, j)`` sorted by the timestamp of the first
    sequence; smallest time differences win ties.
    """
    stamps_a = np.asarray(stamps_a, dtype=float)
    stamps_b = np.asarray(stamps_b, dtype=float)
    candidates = []
    for i, ta in enumerate(stamps_a):
        diffs = np.abs(stamps_b - ta)
        for j in np.nonzero(diffs <= tol)[0]:
            candidates.append((diffs[j], i, int(j)))
    candidates.sort()
    used_a, used_b, pairs = set(), set(), []
    for _, i, j in candidates:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    pairs.sort()
    return pairs


def _matched(est: Trajectory, gt: Trajectory, tol: float):
    pairs = associate(est.stamps, gt.stamps, tol)
    if not pairs:
        raise ValueError("trajectories share no timestamps within tolerance")
    e = [est.poses[i] for i, _ in pairs]
    g = [gt.poses[j] for _, j in pairs]
    return e, g


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic distance of a rotation matrix from the identity, in radians."""
    return float(np.arccos(np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)))


def rpe_rmse(est: Trajectory, gt: Trajectory, delta: int = 1,
             tol: float = 0.02) -> tuple[float, float]:
    """RMSE of relative-pose errors over all index pairs ``(i, i + delta)``.

    Returns ``(translational rmse, rotational rmse)`` in metres and radians.
    The relative motion between matched frames ``i`` and ``i + delta`` is
    ``Q_i^-1 Q_{i+delta}``; the error is the discrepancy between the estimated
    and true relative motions.
    """
    if delta < 1:
        raise ValueError("delta must be a positive frame offset")
    e, g = _matched(est, gt, tol)
    if len(e) <= delta:
        raise ValueError("not enough matched frames for the requested delta")
    terrs, rerrs = [], []
    for i in range(len(e) - delta):
        rel_e = e[i].inverse().compose(e[i + delta])
        rel_g = g[i].inverse().compose(g[i + delta])
        err = rel_g.inverse().compose(rel_e)
        terrs.append(err.translation @ err.translation)
        rerrs.append(rotation_angle(err.rotation) ** 2)
    return float(np.sqrt(np.mean(terrs))), float(np.sqrt(np.mean(rerrs)))


def align_rigid(src: np.ndarray, dst: np.ndarray):
    """Closed-form rigid transform (R, t) minimising ||R src + t - dst||^2."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    W = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(W)
    S = np.eye(3)
    S[2, 2] = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ S @ U.T
    return R, cd - R @ cs


def ate(est: Trajectory, gt: Trajectory, align: bool = False,
        tol: float = 0.02) -> float:
    """RMSE of absolute position errors over matched frames.

    With ``align=True`` the estimate is first registered onto the ground
    truth with the closed-form rigid (no scale) alignment.
    """
    e, g = _matched(est, gt, tol)
    pe = np.array([p.translation for p in e])
    pg = np.array([p.translation for p in g])
    if align:
        R, t = align_rigid(pe, pg)
        pe = pe @ R.T + t
    d = pe - pg
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def final_drift(est: Trajectory, gt: Trajectory, tol: float = 0.02) -> float:
    """Position error at the last matched frame, in metres."""
    e, g = _matched(est, gt, tol)
    return float(np.linalg.norm(e[-1].translation - g[-1].translation))


# aliases matching the trajectory-file vocabulary used by the CLI
ate_rmse = ate
write_trajectory = write_tum
read_trajectory = read_tum

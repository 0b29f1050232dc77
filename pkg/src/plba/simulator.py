"""Synthetic stereo benchmark: a 25-segment house observed from a circular orbit.

All randomness is drawn from counter-based Philox streams keyed by
``(seed, purpose)``; the draw order is fixed (frames ascending, features by
id, left camera before right), so a configuration reproduces byte-identical
observations on any platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .factor_graph import FactorGraph
from .frontend import NEAR_PLANE, Segment2D, cull_line
from .geometry import (
    CameraIntrinsics,
    DegenerateLineError,
    Pose,
    line_from_endpoints,
    pose_update,
)
from .measurement import ImageLineSegment, PointObservation

_STREAM_SCENE = 1
_STREAM_NOISE = 2
_STREAM_INIT = 3

FRAME_DT = 0.1  # seconds between consecutive frames


def _stream(seed: int, purpose: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, purpose]))


@dataclass(frozen=True)
class SimConfig:
    n_frames: int = 100
    n_points: int = 200
    noise_sigma: float = 1.0
    seed: int = 0
    radius: float = 6.0
    camera_height: float = 1.0
    intrinsics: CameraIntrinsics = field(default_factory=lambda: CameraIntrinsics(
        fu=500.0, fv=500.0, cu=320.0, cv=240.0, baseline=0.5, width=640, height=480))


@dataclass(frozen=True)
class SceneLine:
    line_id: int
    start: np.ndarray
    end: np.ndarray


@dataclass(frozen=True)
class ScenePoint:
    point_id: int
    position: np.ndarray


@dataclass(frozen=True)
class Scene:
    lines: tuple
    points: tuple


def _house_segments():
    """25 straight edges: cube walls, gabled roof, door and mullioned window."""
    c = 1.0
    segs = []
    # cube edges, z in [-1, 1]
    for z in (-c, c):
        segs += [((-c, -c, z), (c, -c, z)), ((c, -c, z), (c, c, z)),
                 ((c, c, z), (-c, c, z)), ((-c, c, z), (-c, -c, z))]
    for x, y in ((-c, -c), (c, -c), (c, c), (-c, c)):
        segs.append(((x, y, -c), (x, y, c)))
    # roof ridge along x at height 2, four rafters down to the top corners
    segs.append(((-c, 0.0, 2.0), (c, 0.0, 2.0)))
    for x in (-c, c):
        for y in (-c, c):
            segs.append(((x, 0.0, 2.0), (x, y, c)))
    # door on the y = -1 wall
    segs += [((-0.3, -c, -1.0), (-0.3, -c, 0.2)),
             ((0.3, -c, -1.0), (0.3, -c, 0.2)),
             ((-0.3, -c, 0.2), (0.3, -c, 0.2))]
    # window with a vertical mullion on the x = 1 wall
    segs += [((c, -0.5, 0.2), (c, 0.5, 0.2)), ((c, 0.5, 0.2), (c, 0.5, 0.8)),
             ((c, 0.5, 0.8), (c, -0.5, 0.8)), ((c, -0.5, 0.8), (c, -0.5, 0.2)),
             ((c, 0.0, 0.2), (c, 0.0, 0.8))]
    return segs


def generate_house_scene(n_points: int = 200, seed: int = 0) -> Scene:
    """House of exactly 25 line segments plus points on and near its faces."""
    lines = tuple(SceneLine(i, np.array(a, dtype=float), np.array(b, dtype=float))
                  for i, (a, b) in enumerate(_house_segments()))
    rng = _stream(seed, _STREAM_SCENE)
    pts = []
    for i in range(int(n_points)):
        face = int(rng.integers(0, 6))
        a, b = rng.uniform(-1.0, 1.0, size=2)
        if face == 0:
            p = np.array([a, -1.0, b])
        elif face == 1:
            p = np.array([a, 1.0, b])
        elif face == 2:
            p = np.array([-1.0, a, b])
        elif face == 3:
            p = np.array([1.0, a, b])
        else:
            # roof slope: ridge (y=0, z=2) down to the eaves (|y|=1, z=1)
            s = 0.5 * (b + 1.0)
            y = s if face == 4 else -s
            p = np.array([a, y, 2.0 - s])
        p = p + rng.normal(scale=0.03, size=3)
        pts.append(ScenePoint(i, p))
    return Scene(lines=lines, points=tuple(pts))


def _look_at(center, target):
    z = target - center
    z = z / np.linalg.norm(z)
    x = np.cross(z, np.array([0.0, 0.0, 1.0]))
    nx = np.linalg.norm(x)
    if nx < 1e-12:
        x = np.array([1.0, 0.0, 0.0])
    else:
        x = x / nx
    y = np.cross(z, x)
    R = np.column_stack([x, y, z]).T
    return Pose(R, -R @ center)


def generate_trajectory(cfg: SimConfig):
    """Closed circular orbit around the house, camera aimed at its centre."""
    target = np.array([0.0, 0.0, 0.5])
    poses = []
    for k in range(cfg.n_frames):
        a = 2.0 * np.pi * k / cfg.n_frames
        center = np.array([cfg.radius * np.cos(a), cfg.radius * np.sin(a),
                           cfg.camera_height])
        poses.append(_look_at(center, target))
    return poses


@dataclass(frozen=True)
class PointObs:
    point_id: int
    u: float
    v: float
    u_right: float | None


@dataclass(frozen=True)
class LineObs:
    line_id: int
    left: Segment2D | None
    right: Segment2D | None


@dataclass(frozen=True)
class FrameObservations:
    frame: int
    timestamp: float
    true_pose: Pose
    points: tuple
    lines: tuple


def _right_pose(pose: Pose, K: CameraIntrinsics) -> Pose:
    return Pose(pose.rotation, pose.translation + np.array([-K.baseline, 0.0, 0.0]))


def _in_image(K: CameraIntrinsics, uv):
    return (0.0 <= uv[0] <= K.width - 1.0) and (0.0 <= uv[1] <= K.height - 1.0)


def render_observations(scene: Scene, poses, cfg: SimConfig):
    """Project the scene into every stereo frame and add pixel noise.

    A point needs the left view to be observed at all; the right pixel is
    attached only when also visible there.  Line segments are culled and
    clipped per camera, then their endpoints are perturbed.
    """
    K = cfg.intrinsics
    rng = _stream(cfg.seed, _STREAM_NOISE)
    sigma = float(cfg.noise_sigma)

    def noise():
        return rng.normal() * sigma if sigma > 0.0 else 0.0

    frames = []
    for k, pose in enumerate(poses):
        pose_r = _right_pose(pose, K)
        pobs = []
        for pt in scene.points:
            Xl = pose.transform(pt.position)
            if Xl[2] <= NEAR_PLANE:
                continue
            uv = K.project(Xl)
            if not _in_image(K, uv):
                continue
            Xr = pose_r.transform(pt.position)
            ur = None
            if Xr[2] > NEAR_PLANE:
                uvr = K.project(Xr)
                if _in_image(K, (uvr[0], uvr[1])):
                    ur = uvr[0]
            u = uv[0] + noise()
            v = uv[1] + noise()
            if ur is not None:
                ur = ur + noise()
            pobs.append(PointObs(pt.point_id, float(u), float(v),
                                 None if ur is None else float(ur)))
        lobs = []
        for ln in scene.lines:
            per_cam = []
            for cam_pose in (pose, pose_r):
                seg = cull_line(ln.start, ln.end, cam_pose, K)
                if seg is not None:
                    seg = Segment2D(np.array([seg.start[0] + noise(), seg.start[1] + noise()]),
                                    np.array([seg.end[0] + noise(), seg.end[1] + noise()]))
                per_cam.append(seg)
            if per_cam[0] is not None or per_cam[1] is not None:
                lobs.append(LineObs(ln.line_id, per_cam[0], per_cam[1]))
        frames.append(FrameObservations(k, k * FRAME_DT, pose, tuple(pobs), tuple(lobs)))
    return frames


# ---------------------------------------------------------------------------
# graph construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InitConfig:
    """How the graph estimates are initialized relative to ground truth.

    ``ground_truth`` starts everything at the true values.  ``perturbed``
    draws one tangent perturbation per non-anchor pose and triangulates the
    landmarks from their first stereo observation.  ``odometry`` composes
    noisy relative motions into a drifting chain and triangulates from it.
    """

    mode: str = "ground_truth"
    pose_sigma: float = 0.05
    landmark_sigma: float = 0.0
    odom_trans_sigma: float = 0.01
    odom_rot_sigma: float = 0.002
    seed: int = 0


def _initial_poses(gt_poses, init: InitConfig, rng):
    if init.mode == "ground_truth":
        return list(gt_poses)
    if init.mode == "perturbed":
        out = [gt_poses[0]]
        for T in gt_poses[1:]:
            out.append(pose_update(T, rng.normal(scale=init.pose_sigma, size=6)))
        return out
    if init.mode == "odometry":
        out = [gt_poses[0]]
        for k in range(1, len(gt_poses)):
            rel = gt_poses[k].compose(gt_poses[k - 1].inverse())
            noise = np.concatenate([rng.normal(scale=init.odom_trans_sigma, size=3),
                                    rng.normal(scale=init.odom_rot_sigma, size=3)])
            out.append(pose_update(rel, noise).compose(out[-1]))
        return out
    raise ValueError(f"unknown init mode {init.mode!r}")


def _triangulate_point(obs: PointObs, pose: Pose, K: CameraIntrinsics):
    if obs.u_right is None:
        return None
    disparity = obs.u - obs.u_right
    if disparity <= 1e-6:
        return None
    z = K.fu * K.baseline / disparity
    X_c = np.array([(obs.u - K.cu) * z / K.fu, (obs.v - K.cv) * z / K.fv, z])
    return pose.inverse().transform(X_c)


def _triangulate_line(obs: LineObs, pose: Pose, K: CameraIntrinsics):
    """Intersect the left endpoint rays with the right observation's plane."""
    if obs.left is None or obs.right is None:
        return None
    xr_s = np.array([*obs.right.start, 1.0])
    xr_e = np.array([*obs.right.end, 1.0])
    l_r = np.cross(xr_s, xr_e)
    n_plane = np.linalg.solve(K.line_projection_matrix(), l_r)
    nn = np.linalg.norm(n_plane)
    if nn < 1e-12:
        return None
    n_plane = n_plane / nn
    pts_w = []
    for uv in (obs.left.start, obs.left.end):
        d = K.back_project(uv)
        denom = float(n_plane @ d)
        if abs(denom) < 1e-6:
            return None
        s = K.baseline * n_plane[0] / denom
        if s * d[2] <= NEAR_PLANE:
            return None
        pts_w.append(pose.inverse().transform(s * d))
    try:
        return line_from_endpoints(pts_w[0], pts_w[1])
    except DegenerateLineError:
        return None


def build_graph_from_sim(scene: Scene, observations, cfg: SimConfig,
                         init: InitConfig | None = None,
                         feature_mode: str = "points+lines") -> FactorGraph:
    """Assemble the factor graph for a rendered sequence.

    The first pose is the gauge anchor: it stays at its (ground-truth)
    value and is fixed.  Landmarks that end up under-constrained (fewer
    residual dimensions than their degrees of freedom) are dropped.
    """
    if feature_mode not in ("points", "lines", "points+lines"):
        raise ValueError(f"unknown feature mode {feature_mode!r}")
    if not observations:
        raise ValueError("cannot build a graph from empty observations")
    init = init or InitConfig()
    K = cfg.intrinsics
    rng = _stream(init.seed, _STREAM_INIT)
    gt_poses = [f.true_pose for f in observations]
    poses = _initial_poses(gt_poses, init, rng)

    use_points = feature_mode in ("points", "points+lines")
    use_lines = feature_mode in ("lines", "points+lines")

    graph = FactorGraph(K)
    for k, T in enumerate(poses):
        graph.add_pose(k, T, fixed=(k == 0))

    # landmark initial values
    point_init: dict[int, np.ndarray] = {}
    line_init: dict[int, object] = {}
    if init.mode == "ground_truth":
        if use_points:
            point_init = {p.point_id: p.position.copy() for p in scene.points}
        if use_lines:
            for ln in scene.lines:
                try:
                    line_init[ln.line_id] = line_from_endpoints(ln.start, ln.end)
                except DegenerateLineError:
                    pass
    else:
        if use_points:
            for frame in observations:
                for obs in frame.points:
                    if obs.point_id in point_init:
                        continue
                    X = _triangulate_point(obs, poses[frame.frame], K)
                    if X is not None:
                        point_init[obs.point_id] = X
        if use_lines:
            for frame in observations:
                for obs in frame.lines:
                    if obs.line_id in line_init:
                        continue
                    L = _triangulate_line(obs, poses[frame.frame], K)
                    if L is not None:
                        line_init[obs.line_id] = L
        if init.landmark_sigma > 0.0:
            for pid in sorted(point_init):
                point_init[pid] = point_init[pid] + rng.normal(
                    scale=init.landmark_sigma, size=3)

    # count residual dimensions per landmark, then keep the well-constrained
    point_dims: dict[int, int] = {}
    line_dims: dict[int, int] = {}
    for frame in observations:
        for obs in frame.points:
            point_dims[obs.point_id] = point_dims.get(obs.point_id, 0) + (
                3 if obs.u_right is not None else 2)
        for obs in frame.lines:
            n = (obs.left is not None) + (obs.right is not None)
            line_dims[obs.line_id] = line_dims.get(obs.line_id, 0) + 2 * n

    kept_points = {pid for pid in point_init if point_dims.get(pid, 0) >= 3}
    kept_lines = {lid for lid in line_init if line_dims.get(lid, 0) >= 4}
    if use_points:
        for pid in sorted(kept_points):
            graph.add_point(pid, point_init[pid])
    if use_lines:
        for lid in sorted(kept_lines):
            graph.add_line(lid, line_init[lid])

    for frame in observations:
        if use_points:
            for obs in frame.points:
                if obs.point_id not in kept_points:
                    continue
                graph.add_point_edge(frame.frame, obs.point_id,
                                     PointObservation(np.array([obs.u, obs.v]),
                                                      u_right=obs.u_right))
        if use_lines:
            for obs in frame.lines:
                if obs.line_id not in kept_lines:
                    continue
                for cam, seg in ((0, obs.left), (1, obs.right)):
                    if seg is None:
                        continue
                    graph.add_line_edge(
                        frame.frame, obs.line_id,
                        ImageLineSegment.from_pixels(seg.start[0], seg.start[1],
                                                     seg.end[0], seg.end[1]),
                        camera=cam)
    return graph


# ---------------------------------------------------------------------------
# scene / observation text I/O
# ---------------------------------------------------------------------------

def _fmt(*values):
    return " ".join(repr(float(v)) for v in values)


def scene_to_text(scene: Scene) -> str:
    rows = ["# scene v1"]
    for ln in scene.lines:
        rows.append(f"LINE {ln.line_id} " + _fmt(*ln.start, *ln.end))
    for pt in scene.points:
        rows.append(f"POINT {pt.point_id} " + _fmt(*pt.position))
    return "\n".join(rows) + "\n"


def write_scene(scene: Scene, path):
    with open(path, "w") as f:
        f.write(scene_to_text(scene))


def scene_from_text(text: str) -> Scene:
    lines, points = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s.startswith("#"):
            continue
        tag, *parts = s.split()
        try:
            if tag == "LINE":
                vals = [float(p) for p in parts[1:]]
                if len(vals) != 6:
                    raise ValueError("expected 6 coordinates")
                lines.append(SceneLine(int(parts[0]), np.array(vals[:3]),
                                       np.array(vals[3:])))
            elif tag == "POINT":
                vals = [float(p) for p in parts[1:]]
                if len(vals) != 3:
                    raise ValueError("expected 3 coordinates")
                points.append(ScenePoint(int(parts[0]), np.array(vals)))
            else:
                raise ValueError(f"unknown record type {tag!r}")
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return Scene(lines=tuple(lines), points=tuple(points))


def read_scene(path) -> Scene:
    with open(path) as f:
        return scene_from_text(f.read())


def observations_to_text(frames) -> str:
    rows = ["# observations v1"]
    for f in frames:
        rows.append(f"FRAME {f.frame} " + _fmt(f.timestamp, *f.true_pose.rotation.ravel(),
                                               *f.true_pose.translation))
        for p in f.points:
            ur = float("nan") if p.u_right is None else p.u_right
            rows.append(f"P {p.point_id} " + _fmt(p.u, p.v, ur))
        for ln in f.lines:
            for cam, seg in ((0, ln.left), (1, ln.right)):
                if seg is not None:
                    rows.append(f"L {ln.line_id} {cam} "
                                + _fmt(*seg.start, *seg.end))
    return "\n".join(rows) + "\n"


def write_observations(frames, path):
    with open(path, "w") as fh:
        fh.write(observations_to_text(frames))


def observations_from_text(text: str):
    frames = []
    cur = None  # [frame, timestamp, pose, points, {line_id: [left, right]}]

    def flush():
        if cur is None:
            return
        lobs = tuple(LineObs(lid, pair[0], pair[1])
                     for lid, pair in cur[4].items())
        frames.append(FrameObservations(cur[0], cur[1], cur[2], tuple(cur[3]), lobs))

    for lineno, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s.startswith("#"):
            continue
        tag, *parts = s.split()
        try:
            if tag == "FRAME":
                flush()
                vals = [float(p) for p in parts[1:]]
                if len(vals) != 13:
                    raise ValueError("expected timestamp and 12 pose values")
                pose = Pose(np.array(vals[1:10]).reshape(3, 3), np.array(vals[10:13]))
                cur = [int(parts[0]), vals[0], pose, [], {}]
            elif tag == "P":
                if cur is None:
                    raise ValueError("P record before any FRAME")
                vals = [float(p) for p in parts[1:]]
                if len(vals) != 3:
                    raise ValueError("expected u v u_right")
                ur = None if np.isnan(vals[2]) else vals[2]
                cur[3].append(PointObs(int(parts[0]), vals[0], vals[1], ur))
            elif tag == "L":
                if cur is None:
                    raise ValueError("L record before any FRAME")
                lid, cam = int(parts[0]), int(parts[1])
                vals = [float(p) for p in parts[2:]]
                if len(vals) != 4 or cam not in (0, 1):
                    raise ValueError("expected camera flag and 4 coordinates")
                pair = cur[4].setdefault(lid, [None, None])
                pair[cam] = Segment2D(np.array(vals[:2]), np.array(vals[2:]))
            else:
                raise ValueError(f"unknown record type {tag!r}")
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    flush()
    return frames


def read_observations(path):
    with open(path) as f:
        return observations_from_text(f.read())

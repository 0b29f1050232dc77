"""Factor graph for stereo point/line bundle adjustment, with text snapshots.

Vertices are camera poses (6 DoF), 3D points (3 DoF) and 3D lines in the
orthonormal parameterization (4 DoF).  Edges connect one pose to one
landmark; line edges additionally carry which camera of the rectified rig
observed the segment (0 = left, 1 = right).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    CameraIntrinsics,
    OrthonormalLine,
    PlueckerLine,
    Pose,
    orthonormal_from_plucker,
)
from .measurement import ImageLineSegment, PointObservation

DEFAULT_HUBER_DELTA = 5.99


class GraphValidationError(ValueError):
    """Graph is structurally unusable for optimization."""


@dataclass
class PoseVertex:
    pose: Pose
    fixed: bool = False


@dataclass
class PointVertex:
    position: np.ndarray
    fixed: bool = False

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float)
        if p.shape != (3,) or not np.all(np.isfinite(p)):
            raise ValueError("point position must be a finite 3-vector")
        self.position = p


@dataclass
class LineVertex:
    line: OrthonormalLine
    fixed: bool = False


@dataclass(frozen=True)
class PointEdge:
    pose_id: int
    point_id: int
    obs: PointObservation
    information: np.ndarray
    robust_delta: float | None


@dataclass(frozen=True)
class LineEdge:
    pose_id: int
    line_id: int
    obs: ImageLineSegment
    camera: int
    information: np.ndarray
    robust_delta: float | None


def _check_information(info, dim, name):
    if info is None:
        return np.eye(dim)
    info = np.asarray(info, dtype=float)
    if info.shape != (dim, dim):
        raise ValueError(f"{name} information must be {dim}x{dim}")
    if not np.all(np.isfinite(info)) or np.linalg.norm(info - info.T) > 1e-9:
        raise ValueError(f"{name} information must be finite and symmetric")
    if np.min(np.linalg.eigvalsh(info)) <= 0.0:
        raise ValueError(f"{name} information must be positive definite")
    return info


class FactorGraph:
    """Mutable container of vertices and measurement edges."""

    def __init__(self, intrinsics: CameraIntrinsics):
        self.intrinsics = intrinsics
        self.poses: dict[int, PoseVertex] = {}
        self.points: dict[int, PointVertex] = {}
        self.lines: dict[int, LineVertex] = {}
        self.point_edges: list[PointEdge] = []
        self.line_edges: list[LineEdge] = []

    # -- vertices -----------------------------------------------------------

    def add_pose(self, pose_id: int, pose: Pose, fixed=False):
        if pose_id in self.poses:
            raise ValueError(f"duplicate pose id {pose_id}")
        self.poses[int(pose_id)] = PoseVertex(pose, bool(fixed))

    def add_point(self, point_id: int, position, fixed=False):
        if point_id in self.points:
            raise ValueError(f"duplicate point id {point_id}")
        self.points[int(point_id)] = PointVertex(np.asarray(position, dtype=float), bool(fixed))

    def add_line(self, line_id: int, line, fixed=False):
        if line_id in self.lines:
            raise ValueError(f"duplicate line id {line_id}")
        if isinstance(line, PlueckerLine):
            line = orthonormal_from_plucker(line)
        if not isinstance(line, OrthonormalLine):
            raise TypeError("line must be an OrthonormalLine or PlueckerLine")
        self.lines[int(line_id)] = LineVertex(line, bool(fixed))

    # -- edges --------------------------------------------------------------

    def add_point_edge(self, pose_id: int, point_id: int, obs: PointObservation,
                       information=None, robust_delta=DEFAULT_HUBER_DELTA):
        if pose_id not in self.poses:
            raise GraphValidationError(f"unknown pose id {pose_id}")
        if point_id not in self.points:
            raise GraphValidationError(f"unknown point id {point_id}")
        dim = 3 if obs.stereo else 2
        info = _check_information(information, dim, "point edge")
        self.point_edges.append(PointEdge(int(pose_id), int(point_id), obs, info,
                                          None if robust_delta is None else float(robust_delta)))

    def add_line_edge(self, pose_id: int, line_id: int, obs: ImageLineSegment,
                      camera=0, information=None, robust_delta=DEFAULT_HUBER_DELTA):
        if pose_id not in self.poses:
            raise GraphValidationError(f"unknown pose id {pose_id}")
        if line_id not in self.lines:
            raise GraphValidationError(f"unknown line id {line_id}")
        if camera not in (0, 1):
            raise ValueError("camera must be 0 (left) or 1 (right)")
        if camera == 1 and self.intrinsics.baseline <= 0.0:
            raise GraphValidationError("right-camera edge requires a positive baseline")
        info = _check_information(information, 2, "line edge")
        self.line_edges.append(LineEdge(int(pose_id), int(line_id), obs, int(camera), info,
                                        None if robust_delta is None else float(robust_delta)))

    # -- queries ------------------------------------------------------------

    def right_extrinsic(self) -> Pose:
        """Left-camera to right-camera transform of the rectified rig."""
        return Pose(np.eye(3), np.array([-self.intrinsics.baseline, 0.0, 0.0]))

    def edges_of_pose(self, pose_id: int):
        return ([e for e in self.point_edges if e.pose_id == pose_id],
                [e for e in self.line_edges if e.pose_id == pose_id])

    def validate(self):
        """Raise GraphValidationError on structural problems (refs, gauge)."""
        for e in self.point_edges:
            if e.pose_id not in self.poses or e.point_id not in self.points:
                raise GraphValidationError("point edge references a missing vertex")
        for e in self.line_edges:
            if e.pose_id not in self.poses or e.line_id not in self.lines:
                raise GraphValidationError("line edge references a missing vertex")
        free_poses = any(not v.fixed for v in self.poses.values())
        free_landmarks = (any(not v.fixed for v in self.points.values())
                          or any(not v.fixed for v in self.lines.values()))
        if free_poses and free_landmarks and all(v.fixed is False for v in self.poses.values()):
            raise GraphValidationError("full bundle adjustment needs at least one fixed pose")


# ---------------------------------------------------------------------------
# Text snapshot
# ---------------------------------------------------------------------------

def _fmt(*values):
    return " ".join(repr(float(v)) for v in values)


def graph_to_text(graph: FactorGraph) -> str:
    """Serialize the graph in the documented line-oriented text format."""
    K = graph.intrinsics
    out = ["# factor graph v1"]
    out.append("INTRINSICS " + _fmt(K.fu, K.fv, K.cu, K.cv, K.baseline)
               + f" {K.width} {K.height}")
    for pid in sorted(graph.poses):
        v = graph.poses[pid]
        out.append(f"POSE {pid} {int(v.fixed)} "
                   + _fmt(*v.pose.rotation.ravel(), *v.pose.translation))
    for pid in sorted(graph.points):
        v = graph.points[pid]
        out.append(f"POINT {pid} {int(v.fixed)} " + _fmt(*v.position))
    for lid in sorted(graph.lines):
        v = graph.lines[lid]
        out.append(f"LINE {lid} {int(v.fixed)} "
                   + _fmt(*v.line.U.ravel(), v.line.w1, v.line.w2))
    for e in graph.point_edges:
        delta = float("inf") if e.robust_delta is None else e.robust_delta
        obs = e.obs.vector
        out.append(f"PEDGE {e.pose_id} {e.point_id} {int(e.obs.stereo)} "
                   + _fmt(*obs, *e.information.ravel(), delta))
    for e in graph.line_edges:
        delta = float("inf") if e.robust_delta is None else e.robust_delta
        out.append(f"LEDGE {e.pose_id} {e.line_id} {e.camera} "
                   + _fmt(e.obs.xs[0], e.obs.xs[1], e.obs.xe[0], e.obs.xe[1],
                          *e.information.ravel(), delta))
    return "\n".join(out) + "\n"


def save_graph(graph: FactorGraph, path):
    """Write the graph snapshot to ``path``."""
    with open(path, "w") as f:
        f.write(graph_to_text(graph))


def _parse_floats(parts, n, lineno):
    if len(parts) != n:
        raise ValueError(f"line {lineno}: expected {n} numeric fields, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise ValueError(f"line {lineno}: {exc}") from None


def graph_from_text(text: str) -> FactorGraph:
    """Parse a graph snapshot produced by :func:`graph_to_text`."""
    graph = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tag, *parts = line.split()
        if tag == "INTRINSICS":
            vals = _parse_floats(parts, 7, lineno)
            graph = FactorGraph(CameraIntrinsics(
                fu=vals[0], fv=vals[1], cu=vals[2], cv=vals[3],
                baseline=vals[4], width=int(vals[5]), height=int(vals[6])))
            continue
        if graph is None:
            raise ValueError(f"line {lineno}: INTRINSICS must come first")
        if tag == "POSE":
            vals = _parse_floats(parts, 14, lineno)
            graph.add_pose(int(vals[0]), Pose(np.array(vals[2:11]).reshape(3, 3),
                                              np.array(vals[11:14])),
                           fixed=bool(vals[1]))
        elif tag == "POINT":
            vals = _parse_floats(parts, 5, lineno)
            graph.add_point(int(vals[0]), np.array(vals[2:5]), fixed=bool(vals[1]))
        elif tag == "LINE":
            vals = _parse_floats(parts, 13, lineno)
            graph.add_line(int(vals[0]),
                           OrthonormalLine(np.array(vals[2:11]).reshape(3, 3),
                                           vals[11], vals[12]),
                           fixed=bool(vals[1]))
        elif tag == "PEDGE":
            if len(parts) < 3:
                raise ValueError(f"line {lineno}: truncated PEDGE record")
            pose_id, point_id, stereo = int(parts[0]), int(parts[1]), int(parts[2])
            dim = 3 if stereo else 2
            vals = _parse_floats(parts[3:], dim + dim * dim + 1, lineno)
            obs = PointObservation(np.array(vals[:2]),
                                   u_right=vals[2] if stereo else None)
            delta = vals[-1]
            graph.add_point_edge(pose_id, point_id, obs,
                                 information=np.array(vals[dim:-1]).reshape(dim, dim),
                                 robust_delta=None if np.isinf(delta) else delta)
        elif tag == "LEDGE":
            if len(parts) < 3:
                raise ValueError(f"line {lineno}: truncated LEDGE record")
            pose_id, line_id, camera = int(parts[0]), int(parts[1]), int(parts[2])
            vals = _parse_floats(parts[3:], 9, lineno)
            obs = ImageLineSegment.from_pixels(vals[0], vals[1], vals[2], vals[3])
            delta = vals[8]
            graph.add_line_edge(pose_id, line_id, obs, camera=camera,
                                information=np.array(vals[4:8]).reshape(2, 2),
                                robust_delta=None if np.isinf(delta) else delta)
        else:
            raise ValueError(f"line {lineno}: unknown record type {tag!r}")
    if graph is None:
        raise ValueError("graph file contains no INTRINSICS record")
    return graph


def load_graph(path) -> FactorGraph:
    """Read a graph snapshot written by :func:`save_graph`."""
    with open(path) as f:
        return graph_from_text(f.read())

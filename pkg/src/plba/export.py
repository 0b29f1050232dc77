"""Plain-text map exports (PLY and CSV) for external plotting tools.

Infinite lines are drawn as finite segments of fixed half-length centred on
the point of the line closest to the world origin; that is a visualization
aid only, the underlying landmark remains the infinite line.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from .factor_graph import FactorGraph
from .geometry import plucker_from_orthonormal

LINE_HALF_LENGTH = 2.0


def _r(value) -> str:
    return repr(float(value))


def _line_segment(vertex, half_length: float):
    line = plucker_from_orthonormal(vertex.line)
    if line.at_infinity:
        return None
    c = line.closest_point_to_origin()
    d = line.v / np.linalg.norm(line.v)
    return c - half_length * d, c + half_length * d


def map_to_ply(graph: FactorGraph, half_length: float = LINE_HALF_LENGTH) -> str:
    """Point landmarks as vertices, line landmarks as edges between vertices."""
    vertices = []
    edges = []
    for pid in sorted(graph.points):
        vertices.append(graph.points[pid].position)
    for lid in sorted(graph.lines):
        seg = _line_segment(graph.lines[lid], half_length)
        if seg is None:
            continue
        edges.append((len(vertices), len(vertices) + 1))
        vertices.extend(seg)
    rows = ["ply", "format ascii 1.0",
            f"element vertex {len(vertices)}",
            "property float x", "property float y", "property float z",
            f"element edge {len(edges)}",
            "property int vertex1", "property int vertex2",
            "end_header"]
    for v in vertices:
        rows.append(" ".join(_r(c) for c in v))
    for a, b in edges:
        rows.append(f"{a} {b}")
    return "\n".join(rows) + "\n"


def points_csv(graph: FactorGraph) -> str:
    rows = ["id,fixed,x,y,z"]
    for pid in sorted(graph.points):
        v = graph.points[pid]
        rows.append(f"{pid},{int(v.fixed)}," + ",".join(_r(c) for c in v.position))
    return "\n".join(rows) + "\n"


def lines_csv(graph: FactorGraph, half_length: float = LINE_HALF_LENGTH) -> str:
    rows = ["id,fixed,nx,ny,nz,vx,vy,vz,x1,y1,z1,x2,y2,z2"]
    for lid in sorted(graph.lines):
        v = graph.lines[lid]
        line = plucker_from_orthonormal(v.line)
        seg = _line_segment(v, half_length)
        ends = np.concatenate(seg) if seg is not None else np.full(6, np.nan)
        rows.append(f"{lid},{int(v.fixed)},"
                    + ",".join(_r(c) for c in np.concatenate([line.n, line.v, ends])))
    return "\n".join(rows) + "\n"


def trajectory_csv(graph: FactorGraph) -> str:
    """Camera centres and camera-in-world orientations, one row per pose."""
    rows = ["id,fixed,cx,cy,cz,qx,qy,qz,qw"]
    for pid in sorted(graph.poses):
        v = graph.poses[pid]
        q = Rotation.from_matrix(v.pose.rotation.T).as_quat()
        if q[3] < 0.0:
            q = -q
        vals = np.concatenate([v.pose.center, q])
        rows.append(f"{pid},{int(v.fixed)}," + ",".join(_r(c) for c in vals))
    return "\n".join(rows) + "\n"

"""PLY and CSV map exports."""

import csv
import io

import numpy as np
import pytest

from plba.export import (LINE_HALF_LENGTH, lines_csv, map_to_ply, points_csv,
                         trajectory_csv)
from plba.factor_graph import FactorGraph, LineVertex
from plba.geometry import (CameraIntrinsics, Pose, line_from_endpoints,
                           orthonormal_from_plucker, plucker_from_orthonormal,
                           so3_exp)


def small_graph():
    g = FactorGraph(CameraIntrinsics(500.0, 500.0, 320.0, 240.0,
                                     baseline=0.5, width=640, height=480))
    g.add_pose(0, Pose(np.eye(3), np.zeros(3)), fixed=True)
    g.add_pose(1, Pose(so3_exp(np.array([0.0, 0.1, 0.0])),
                       np.array([0.5, 0.0, 0.2])), fixed=False)
    g.add_point(0, np.array([1.0, 2.0, 5.0]), fixed=False)
    g.add_point(7, np.array([-1.0, 0.5, 4.0]), fixed=True)
    g.add_line(3, line_from_endpoints(np.array([0.0, 1.0, 4.0]),
                                      np.array([2.0, 1.0, 4.0])), fixed=False)
    return g


def parse_csv(text):
    return list(csv.reader(io.StringIO(text)))


# ---------------------------------------------------------------------------
# PLY


def test_ply_header_counts_points_and_line_endpoints():
    text = map_to_ply(small_graph())
    lines = text.splitlines()
    assert lines[0] == "ply"
    assert lines[1] == "format ascii 1.0"
    # 2 point landmarks + 2 endpoints for the single line landmark
    assert "element vertex 4" in lines
    assert "element edge 1" in lines
    header_end = lines.index("end_header")
    body = lines[header_end + 1:]
    assert len(body) == 4 + 1
    # every vertex row parses as three floats, every edge row as two ints
    for row in body[:4]:
        assert len([float(x) for x in row.split()]) == 3
    a, b = (int(x) for x in body[4].split())
    assert (a, b) == (2, 3)


def test_ply_vertex_rows_match_graph_content():
    g = small_graph()
    text = map_to_ply(g)
    body = text.splitlines()[text.splitlines().index("end_header") + 1:]
    verts = np.array([[float(x) for x in row.split()] for row in body[:4]])
    np.testing.assert_allclose(verts[0], [1.0, 2.0, 5.0])
    np.testing.assert_allclose(verts[1], [-1.0, 0.5, 4.0])
    # the two line endpoints straddle the closest point to the origin and
    # sit half-length apart along the direction
    line = plucker_from_orthonormal(g.lines[3].line)
    c = line.closest_point_to_origin()
    np.testing.assert_allclose(0.5 * (verts[2] + verts[3]), c, atol=1e-12)
    assert np.linalg.norm(verts[3] - verts[2]) == pytest.approx(
        2.0 * LINE_HALF_LENGTH)
    d = (verts[3] - verts[2]) / np.linalg.norm(verts[3] - verts[2])
    v = line.v / np.linalg.norm(line.v)
    np.testing.assert_allclose(np.abs(d @ v), 1.0, atol=1e-12)


def test_ply_custom_half_length():
    text = map_to_ply(small_graph(), half_length=0.25)
    body = text.splitlines()[text.splitlines().index("end_header") + 1:]
    verts = np.array([[float(x) for x in row.split()] for row in body[:4]])
    assert np.linalg.norm(verts[3] - verts[2]) == pytest.approx(0.5)


def test_ply_empty_graph():
    g = FactorGraph(CameraIntrinsics(500.0, 500.0, 320.0, 240.0))
    text = map_to_ply(g)
    assert "element vertex 0" in text
    assert "element edge 0" in text
    assert text.splitlines()[-1] == "end_header"


# ---------------------------------------------------------------------------
# CSV


def test_points_csv_rows():
    rows = parse_csv(points_csv(small_graph()))
    assert rows[0] == ["id", "fixed", "x", "y", "z"]
    assert len(rows) == 3
    assert rows[1][:2] == ["0", "0"]
    assert [float(x) for x in rows[1][2:]] == [1.0, 2.0, 5.0]
    assert rows[2][:2] == ["7", "1"]
    assert [float(x) for x in rows[2][2:]] == [-1.0, 0.5, 4.0]


def test_lines_csv_row_matches_plucker_and_endpoints():
    g = small_graph()
    rows = parse_csv(lines_csv(g))
    assert rows[0] == ["id", "fixed", "nx", "ny", "nz",
                       "vx", "vy", "vz", "x1", "y1", "z1", "x2", "y2", "z2"]
    assert len(rows) == 2
    assert rows[1][:2] == ["3", "0"]
    vals = np.array([float(x) for x in rows[1][2:]])
    line = plucker_from_orthonormal(g.lines[3].line)
    np.testing.assert_allclose(vals[:3], line.n, atol=1e-15)
    np.testing.assert_allclose(vals[3:6], line.v, atol=1e-15)
    mid = 0.5 * (vals[6:9] + vals[9:12])
    np.testing.assert_allclose(mid, line.closest_point_to_origin(), atol=1e-12)


def test_lines_csv_line_at_infinity_gets_nan_endpoints():
    g = small_graph()
    inf = orthonormal_from_plucker(line_from_endpoints(
        np.array([0.0, 1.0, 4.0]), np.array([2.0, 1.0, 4.0])))
    # zero the w2 component: a line at infinity in orthonormal form
    g.add_line(9, type(inf)(U=inf.U, w1=1.0, w2=0.0), fixed=True)
    rows = parse_csv(lines_csv(g))
    assert len(rows) == 3
    assert rows[2][0] == "9"
    ends = [float(x) for x in rows[2][8:]]
    assert all(np.isnan(ends))
    # the Pluecker columns themselves stay finite
    assert all(np.isfinite([float(x) for x in rows[2][2:8]]))


def test_lines_csv_line_at_infinity_skipped_in_ply():
    g = small_graph()
    inf = g.lines[3].line
    g.add_line(9, type(inf)(U=inf.U, w1=1.0, w2=0.0), fixed=True)
    text = map_to_ply(g)
    assert "element vertex 4" in text  # 2 points + 2 endpoints, not 6
    assert "element edge 1" in text


def test_trajectory_csv_camera_in_world():
    g = small_graph()
    rows = parse_csv(trajectory_csv(g))
    assert rows[0] == ["id", "fixed", "cx", "cy", "cz",
                       "qx", "qy", "qz", "qw"]
    assert len(rows) == 3
    assert rows[1][:2] == ["0", "1"]
    vals0 = np.array([float(x) for x in rows[1][2:]])
    np.testing.assert_allclose(vals0[:3], np.zeros(3))
    np.testing.assert_allclose(vals0[3:], [0.0, 0.0, 0.0, 1.0])
    assert rows[2][:2] == ["1", "0"]
    vals1 = np.array([float(x) for x in rows[2][2:]])
    np.testing.assert_allclose(vals1[:3], g.poses[1].pose.center, atol=1e-15)
    # quaternion encodes R^T (camera-to-world) with canonical qw >= 0
    from scipy.spatial.transform import Rotation
    R = Rotation.from_quat(vals1[3:]).as_matrix()
    np.testing.assert_allclose(R, g.poses[1].pose.rotation.T, atol=1e-12)
    assert vals1[6] >= 0.0


def test_trajectory_csv_quaternion_sign_canonical():
    g = FactorGraph(CameraIntrinsics(500.0, 500.0, 320.0, 240.0))
    rng = np.random.default_rng(3)
    for k in range(20):
        g.add_pose(k, Pose(so3_exp(rng.normal(size=3)), rng.normal(size=3)),
                   fixed=True)
    rows = parse_csv(trajectory_csv(g))
    for row in rows[1:]:
        assert float(row[-1]) >= 0.0


def test_empty_graph_csvs_are_header_only():
    g = FactorGraph(CameraIntrinsics(500.0, 500.0, 320.0, 240.0))
    assert points_csv(g) == "id,fixed,x,y,z\n"
    assert lines_csv(g) == "id,fixed,nx,ny,nz,vx,vy,vz,x1,y1,z1,x2,y2,z2\n"
    assert trajectory_csv(g) == "id,fixed,cx,cy,cz,qx,qy,qz,qw\n"


def test_csv_values_round_trip_exactly():
    g = small_graph()
    rows = parse_csv(points_csv(g))
    again = np.array([float(x) for x in rows[1][2:]])
    np.testing.assert_array_equal(again, g.points[0].position)

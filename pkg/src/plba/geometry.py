"""3D line and rigid-body geometry for a stereo point/line SLAM back-end.

Conventions used throughout the package:

* Poses map world coordinates into camera coordinates, ``x_c = R x_w + t``.
* Pose tangent increments are 6-vectors ``(rho, phi)`` with the translation
  part first; they act on the left, ``T <- Exp(delta^) . T``.
* Pluecker coordinates are the pair ``(n, v)`` with moment ``n = p x v`` for
  any point ``p`` on the line.  Stored lines are normalised to unit 6-vector
  norm with the sign fixed by the largest-magnitude component of ``v`` (of
  ``n`` for lines at infinity) being positive.
* The orthonormal line parameterization is ``(U, W)`` with ``U in SO(3)``,
  ``W in SO(2)``; its 4-vector tangent is ``(theta, theta_w)`` where the
  3-vector ``theta`` rotates ``U`` on the left and the scalar rotates ``W``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateLineError(ValueError):
    """Raised when an operation cannot produce a well-defined line/point."""


def _as_float_array(x, shape, name):
    a = np.asarray(x, dtype=float)
    if a.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    return a


def _readonly(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def skew(v):
    """Cross-product matrix [v]_x with [v]_x w = v x w."""
    v = np.asarray(v, dtype=float)
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def so3_exp(phi):
    """Rodrigues formula, series fallback below 1e-8 rad."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    K = skew(phi)
    if angle < 1e-8:
        # second-order series keeps orthogonality to machine precision here
        return np.eye(3) + K + 0.5 * (K @ K)
    s = np.sin(angle) / angle
    c = (1.0 - np.cos(angle)) / (angle * angle)
    return np.eye(3) + s * K + c * (K @ K)


def so3_log(R):
    """Rotation vector of R; angle in [0, pi]."""
    R = np.asarray(R, dtype=float)
    cos_angle = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    angle = np.arccos(cos_angle)
    if angle < 1e-8:
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) * 0.5
    if angle > np.pi - 1e-6:
        # near pi the antisymmetric part degenerates; use the symmetric part
        A = (R + np.eye(3)) * 0.5
        axis = np.sqrt(np.clip(np.diag(A), 0.0, None))
        k = int(np.argmax(axis))
        if axis[k] < 1e-12:
            raise ValueError("cannot extract rotation axis")
        axis = A[:, k] / axis[k]
        axis = axis / np.linalg.norm(axis)
        # fix the sign using the off-diagonal antisymmetric residue
        w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        if np.dot(w, axis) < 0.0:
            axis = -axis
        return axis * angle
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return w * (angle / (2.0 * np.sin(angle)))


def project_to_so3(R):
    """Nearest rotation matrix in Frobenius norm (via SVD)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


def se3_exp(xi):
    """SE(3) exponential of xi = (rho, phi), translation part first.

    Returns the rotation matrix and translation of Exp(xi^).
    """
    xi = _as_float_array(xi, (6,), "xi")
    rho, phi = xi[:3], xi[3:]
    R = so3_exp(phi)
    angle = np.linalg.norm(phi)
    K = skew(phi)
    if angle < 1e-8:
        V = np.eye(3) + 0.5 * K + (K @ K) / 6.0
    else:
        a2 = angle * angle
        V = (np.eye(3)
             + ((1.0 - np.cos(angle)) / a2) * K
             + ((angle - np.sin(angle)) / (a2 * angle)) * (K @ K))
    return R, V @ rho


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping world to camera coordinates, x_c = R x_w + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _as_float_array(self.rotation, (3, 3), "rotation")
        t = _as_float_array(self.translation, (3,), "translation")
        if np.linalg.norm(R.T @ R - np.eye(3)) > 1e-6 or np.linalg.det(R) < 0.0:
            raise ValueError("rotation must be a proper orthonormal matrix")
        object.__setattr__(self, "rotation", _readonly(R))
        object.__setattr__(self, "translation", _readonly(t))

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M):
        M = _as_float_array(M, (4, 4), "matrix")
        return cls(M[:3, :3], M[:3, 3])

    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def compose(self, other: "Pose") -> "Pose":
        """self o other: apply ``other`` first, then ``self``."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def transform(self, points):
        """Map world point(s) (..., 3) into the camera frame."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    @property
    def center(self):
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation


def pose_update(pose: Pose, delta_xi) -> Pose:
    """Left-multiplicative update T <- Exp(delta^) . T, delta = (rho, phi).

    The rotation is re-orthonormalised so chained updates stay on SO(3).
    """
    R, t = se3_exp(delta_xi)
    return Pose(project_to_so3(R @ pose.rotation), R @ pose.translation + t)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Rectified pinhole stereo rig; baseline is the left-to-right offset in m."""

    fu: float
    fv: float
    cu: float
    cv: float
    baseline: float = 0.0
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if self.fu <= 0.0 or self.fv <= 0.0:
            raise ValueError("focal lengths must be positive")
        if self.baseline < 0.0:
            raise ValueError("baseline must be non-negative")

    def matrix(self):
        return np.array([
            [self.fu, 0.0, self.cu],
            [0.0, self.fv, self.cv],
            [0.0, 0.0, 1.0],
        ])

    def line_projection_matrix(self):
        """Maps the moment vector of a camera-frame line to the image line.

        Equals fu*fv*inv(K)^T for the pinhole matrix K; only the moment part
        of the Pluecker coordinates enters the projection.
        """
        return np.array([
            [self.fv, 0.0, 0.0],
            [0.0, self.fu, 0.0],
            [-self.fv * self.cu, -self.fu * self.cv, self.fu * self.fv],
        ])

    def project(self, X):
        """Pixel (u, v) of camera-frame point(s) with positive depth."""
        X = np.asarray(X, dtype=float)
        z = X[..., 2]
        return np.stack([self.fu * X[..., 0] / z + self.cu,
                         self.fv * X[..., 1] / z + self.cv], axis=-1)

    def back_project(self, uv):
        """Unit-depth ray direction of pixel(s) (u, v)."""
        uv = np.asarray(uv, dtype=float)
        return np.stack([(uv[..., 0] - self.cu) / self.fu,
                         (uv[..., 1] - self.cv) / self.fv,
                         np.ones_like(uv[..., 0])], axis=-1)


def _normalize_plucker(n, v):
    scale = np.sqrt(np.dot(n, n) + np.dot(v, v))
    if scale < 1e-15:
        raise DegenerateLineError("zero Pluecker coordinates")
    n, v = n / scale, v / scale
    anchor = v if np.linalg.norm(v) > 1e-12 else n
    s = anchor[int(np.argmax(np.abs(anchor)))]
    if s < 0.0:
        n, v = -n, -v
    return n, v


@dataclass(frozen=True)
class PlueckerLine:
    """Pluecker coordinates (n, v), n = p x v; stored as a unit 6-vector."""

    n: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        n = _as_float_array(self.n, (3,), "n")
        v = _as_float_array(self.v, (3,), "v")
        n, v = _normalize_plucker(n, v)
        dot = abs(np.dot(n, v))
        if dot > 1e-9:
            raise DegenerateLineError(f"n.v = {dot:.3e} violates the Pluecker constraint")
        object.__setattr__(self, "n", _readonly(n))
        object.__setattr__(self, "v", _readonly(v))

    @property
    def coords(self):
        """Stored unit 6-vector (n, v)."""
        return np.concatenate([self.n, self.v])

    @classmethod
    def from_coords(cls, L):
        L = _as_float_array(L, (6,), "coords")
        return cls(L[:3], L[3:])

    @property
    def at_infinity(self):
        return np.linalg.norm(self.v) <= 1e-12

    def closest_point_to_origin(self):
        if self.at_infinity:
            raise DegenerateLineError("line at infinity has no finite points")
        return np.cross(self.v, self.n) / np.dot(self.v, self.v)

    def is_same_line(self, other: "PlueckerLine", tol=1e-9):
        """Projective equality of the stored unit coordinate vectors."""
        a, b = self.coords, other.coords
        return min(np.linalg.norm(a - b), np.linalg.norm(a + b)) <= tol


def plucker_from_points(X1, X2) -> PlueckerLine:
    """Line through two homogeneous 4-vector points.

    For finite points ``Xi = (xi, ri)`` this is ``v = r1 x2 - r2 x1`` and
    ``n = x1 x x2``, which satisfies ``n = p x v`` for every point ``p`` on
    the line and is invariant to rescaling either input.
    """
    X1 = _as_float_array(X1, (4,), "X1")
    X2 = _as_float_array(X2, (4,), "X2")
    if X1[3] == 0.0 and X2[3] == 0.0:
        raise DegenerateLineError("both points at infinity")
    n = np.cross(X1[:3], X2[:3])
    v = X1[3] * X2[:3] - X2[3] * X1[:3]
    norm = np.sqrt(np.dot(n, n) + np.dot(v, v))
    if norm <= 1e-12 * max(np.linalg.norm(X1) * np.linalg.norm(X2), 1.0):
        raise DegenerateLineError("points are projectively coincident")
    return PlueckerLine(n, v)


def line_from_endpoints(p1, p2) -> PlueckerLine:
    """Line through two Euclidean 3D points."""
    p1 = _as_float_array(p1, (3,), "p1")
    p2 = _as_float_array(p2, (3,), "p2")
    return plucker_from_points(np.append(p1, 1.0), np.append(p2, 1.0))


def _perpendicular_unit(x):
    # deterministic unit vector orthogonal to x
    k = int(np.argmin(np.abs(x)))
    e = np.zeros(3)
    e[k] = 1.0
    u = np.cross(x, e)
    return u / np.linalg.norm(u)


@dataclass(frozen=True)
class OrthonormalLine:
    """Minimal 4-DoF line parameterization (U, W), U in SO(3), W in SO(2).

    Columns of U are (n/|n|, v/|v|, n x v/|n x v|); (w1, w2) is the unit
    vector (|n|, |v|)/sqrt(|n|^2+|v|^2) defining W.
    """

    U: np.ndarray
    w1: float
    w2: float

    def __post_init__(self):
        U = _as_float_array(self.U, (3, 3), "U")
        if np.linalg.norm(U.T @ U - np.eye(3)) > 1e-6 or np.linalg.det(U) < 0.0:
            raise ValueError("U must be a proper orthonormal matrix")
        w = np.hypot(self.w1, self.w2)
        if not np.isfinite(w) or w < 1e-12:
            raise ValueError("(w1, w2) must be a non-zero finite pair")
        object.__setattr__(self, "U", _readonly(U))
        object.__setattr__(self, "w1", float(self.w1) / w)
        object.__setattr__(self, "w2", float(self.w2) / w)

    @property
    def W(self):
        return np.array([[self.w1, -self.w2], [self.w2, self.w1]])

    @property
    def coords(self):
        """Unit Pluecker 6-vector (w1 u1, w2 u2) represented by (U, W)."""
        return np.concatenate([self.w1 * self.U[:, 0], self.w2 * self.U[:, 1]])


def orthonormal_from_plucker(line: PlueckerLine) -> OrthonormalLine:
    nn = np.linalg.norm(line.n)
    nv = np.linalg.norm(line.v)
    if nv <= 1e-12:
        u1 = line.n / nn
        u2 = _perpendicular_unit(u1)
    elif nn <= 1e-12:
        u2 = line.v / nv
        u1 = _perpendicular_unit(u2)
    else:
        u1 = line.n / nn
        u2 = line.v / nv
        # re-orthogonalise against u1 so U stays orthonormal under fp noise
        u2 = u2 - np.dot(u1, u2) * u1
        u2 = u2 / np.linalg.norm(u2)
    u3 = np.cross(u1, u2)
    return OrthonormalLine(np.column_stack([u1, u2, u3]), nn, nv)


def plucker_from_orthonormal(ortho: OrthonormalLine) -> PlueckerLine:
    return PlueckerLine(ortho.w1 * ortho.U[:, 0], ortho.w2 * ortho.U[:, 1])


def update_orthonormal(ortho: OrthonormalLine, delta_theta) -> OrthonormalLine:
    """Minimal update: U <- Exp(theta^) U on the left, W <- W Rot(theta_w).

    U is re-orthonormalised so chained updates stay on SO(3).
    """
    d = _as_float_array(delta_theta, (4,), "delta_theta")
    U = project_to_so3(so3_exp(d[:3]) @ ortho.U)
    c, s = np.cos(d[3]), np.sin(d[3])
    return OrthonormalLine(U, ortho.w1 * c - ortho.w2 * s, ortho.w2 * c + ortho.w1 * s)


def line_transform_matrix(pose: Pose):
    """6x6 matrix H with (n_c, v_c) = H (n_w, v_w) for x_c = R x_w + t."""
    R = pose.rotation
    H = np.zeros((6, 6))
    H[:3, :3] = R
    H[:3, 3:] = skew(pose.translation) @ R
    H[3:, 3:] = R
    return H


def transform_line(pose: Pose, line: PlueckerLine) -> PlueckerLine:
    """Map a world-frame line into the camera frame."""
    L = line_transform_matrix(pose) @ line.coords
    return PlueckerLine(L[:3], L[3:])


def project_line(intrinsics: CameraIntrinsics, line: PlueckerLine):
    """Image of a camera-frame line as homogeneous coefficients (l1, l2, l3).

    Only the moment enters; the result is unusable when l1 = l2 = 0 (the
    line projects through the optical centre), which callers must test.
    """
    return intrinsics.line_projection_matrix() @ line.n


def trim_endpoints(line: PlueckerLine, endpoints_uv, pose: Pose,
                   intrinsics: CameraIntrinsics):
    """3D points on the world-frame line closest to two observed endpoint rays.

    ``endpoints_uv`` holds two pixel observations (2x2).  Each pixel is
    back-projected through ``pose`` and the closest point on ``line`` to that
    viewing ray is returned (in world coordinates).  Rays (anti-)parallel to
    the line leave the closest point undefined.
    """
    uv = _as_float_array(endpoints_uv, (2, 2), "endpoints_uv")
    if line.at_infinity:
        raise DegenerateLineError("cannot trim a line at infinity")
    R, t = pose.rotation, pose.translation
    # line in the camera frame
    cam = transform_line(pose, line)
    v = cam.v / np.linalg.norm(cam.v)
    p0 = cam.closest_point_to_origin()
    out = []
    for k in range(2):
        d = intrinsics.back_project(uv[k])
        # closest point on {p0 + s v} to the ray {tau d}: solve the 2x2 system
        dd = np.dot(d, d)
        dv = np.dot(d, v)
        denom = dd - dv * dv
        if denom <= 1e-12 * dd:
            raise DegenerateLineError("endpoint ray is parallel to the line")
        w = p0  # p0 - ray origin
        s = (dv * np.dot(d, w) - dd * np.dot(v, w)) / denom
        X_c = p0 + s * v
        out.append(R.T @ (X_c - t))
    return out[0], out[1]

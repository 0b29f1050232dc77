"""Re-projection residuals and analytic Jacobians for point and line edges.

Point features use the rectified-stereo residual (u, v, u_right); line
features use the signed distances of the two observed segment endpoints to
the projected infinite line.  All pose Jacobians are taken with respect to a
left-multiplicative tangent increment (rho, phi), translation first, and all
line Jacobians with respect to the 4-vector orthonormal tangent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    CameraIntrinsics,
    DegenerateLineError,
    OrthonormalLine,
    Pose,
    line_from_endpoints,
    line_transform_matrix,
    orthonormal_from_plucker,
    pose_update,
    skew,
    so3_exp,
    update_orthonormal,
)


class BehindCameraError(ValueError):
    """Point observation with depth at or below the near limit."""


@dataclass(frozen=True)
class PointObservation:
    """Pixel observation of a 3D point; ``u_right`` present for stereo."""

    uv: np.ndarray
    u_right: float | None = None

    def __post_init__(self):
        uv = np.asarray(self.uv, dtype=float)
        if uv.shape != (2,) or not np.all(np.isfinite(uv)):
            raise ValueError("uv must be a finite 2-vector")
        uv = uv.copy()
        uv.flags.writeable = False
        object.__setattr__(self, "uv", uv)
        if self.u_right is not None:
            ur = float(self.u_right)
            if not np.isfinite(ur):
                raise ValueError("u_right must be finite")
            object.__setattr__(self, "u_right", ur)

    @property
    def stereo(self):
        return self.u_right is not None

    @property
    def vector(self):
        """(u, v) or (u, v, u_right)."""
        if self.u_right is None:
            return np.asarray(self.uv)
        return np.array([self.uv[0], self.uv[1], self.u_right])


@dataclass(frozen=True)
class ImageLineSegment:
    """Observed 2D segment endpoints as homogeneous pixels (u, v, 1)."""

    xs: np.ndarray
    xe: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        xe = np.asarray(self.xe, dtype=float)
        for name, x in (("xs", xs), ("xe", xe)):
            if x.shape != (3,) or not np.all(np.isfinite(x)):
                raise ValueError(f"{name} must be a finite 3-vector")
            if x[2] != 1.0:
                raise ValueError(f"{name} must be homogeneous with third component 1")
        if np.allclose(xs, xe):
            raise ValueError("segment endpoints must be distinct")
        xs, xe = xs.copy(), xe.copy()
        xs.flags.writeable = False
        xe.flags.writeable = False
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "xe", xe)

    @classmethod
    def from_pixels(cls, us, vs, ue, ve):
        return cls(np.array([us, vs, 1.0]), np.array([ue, ve, 1.0]))


def _stereo_projection(X_c, K: CameraIntrinsics, stereo: bool):
    x, y, z = X_c
    u = K.fu * x / z + K.cu
    v = K.fv * y / z + K.cv
    if not stereo:
        return np.array([u, v])
    return np.array([u, v, K.fu * (x - K.baseline) / z + K.cu])


def point_residual(obs: PointObservation, pose: Pose, X_w, K: CameraIntrinsics,
                   depth_min=1e-4):
    """Observed minus predicted pixel coordinates of a world point.

    Returns (u, v) for monocular and (u, v, u_right) for stereo
    observations.  Depth at or below ``depth_min`` raises
    :class:`BehindCameraError`; the optimizer deactivates such edges.
    """
    X_c = pose.transform(np.asarray(X_w, dtype=float))
    if X_c[2] <= depth_min:
        raise BehindCameraError(f"depth {X_c[2]:.3e} <= {depth_min:.3e}")
    return obs.vector - _stereo_projection(X_c, K, obs.stereo)


def line_residual(obs: ImageLineSegment, lprime):
    """Signed endpoint distances to the image line (l1, l2, l3)."""
    l = np.asarray(lprime, dtype=float)
    ln = np.hypot(l[0], l[1])
    if ln <= 1e-12:
        raise DegenerateLineError("image line has zero normal (l1 = l2 = 0)")
    return np.array([obs.xs @ l, obs.xe @ l]) / ln


def predict_image_line(pose: Pose, line, K: CameraIntrinsics,
                       extrinsic: Pose | None = None):
    """Homogeneous image-line coefficients of a world-frame line.

    ``line`` may be a :class:`PlueckerLine` or an :class:`OrthonormalLine`.
    ``extrinsic`` maps the pose's camera frame into the observing camera
    (identity for the left camera of a rig).
    """
    L_w = line.coords
    H = line_transform_matrix(pose)
    if extrinsic is not None:
        H = line_transform_matrix(extrinsic) @ H
    L_c = H @ L_w
    return K.line_projection_matrix() @ L_c[:3]


# ---------------------------------------------------------------------------
# Jacobian blocks
# ---------------------------------------------------------------------------

def jac_residual_wrt_lprime(obs: ImageLineSegment, lprime):
    """2x3 derivative of the endpoint-distance residual in the image line."""
    l = np.asarray(lprime, dtype=float)
    ln2 = l[0] * l[0] + l[1] * l[1]
    ln = np.sqrt(ln2)
    if ln <= 1e-12:
        raise DegenerateLineError("image line has zero normal (l1 = l2 = 0)")
    e = np.array([obs.xs @ l, obs.xe @ l]) / ln
    J = np.empty((2, 3))
    for i, x in enumerate((obs.xs, obs.xe)):
        J[i, 0] = x[0] / ln - l[0] * e[i] / ln2
        J[i, 1] = x[1] / ln - l[1] * e[i] / ln2
        J[i, 2] = 1.0 / ln
    return J


def jac_lprime_wrt_Lc(K: CameraIntrinsics):
    """3x6 derivative of the image line in the camera-frame Pluecker vector."""
    J = np.zeros((3, 6))
    J[:, :3] = K.line_projection_matrix()
    return J


def jac_Lc_wrt_Lw(pose: Pose):
    """6x6 derivative of the camera-frame line in the world-frame line."""
    return line_transform_matrix(pose)


def jac_Lw_wrt_dtheta(ortho: OrthonormalLine):
    """6x4 derivative of the world-frame Pluecker vector in the 4-DoF tangent."""
    u1, u2 = ortho.U[:, 0], ortho.U[:, 1]
    J = np.zeros((6, 4))
    J[:3, :3] = -skew(ortho.w1 * u1)
    J[:3, 3] = -ortho.w2 * u1
    J[3:, :3] = -skew(ortho.w2 * u2)
    J[3:, 3] = ortho.w1 * u2
    return J


def jac_Lc_wrt_dxi(pose: Pose, L_w):
    """6x6 derivative of the camera-frame line in the pose tangent (rho, phi)."""
    L = np.asarray(L_w, dtype=float)
    n_w, v_w = L[:3], L[3:]
    R, t = pose.rotation, pose.translation
    Rv = R @ v_w
    Rn = R @ n_w
    J = np.zeros((6, 6))
    J[:3, :3] = -skew(Rv)
    J[:3, 3:] = -skew(Rn) - skew(np.cross(t, Rv))
    J[3:, 3:] = -skew(Rv)
    return J


def line_jacobians(obs: ImageLineSegment, pose: Pose, ortho: OrthonormalLine,
                   K: CameraIntrinsics, extrinsic: Pose | None = None):
    """Chained 2x6 pose and 2x4 line Jacobians of the line residual.

    All blocks are evaluated at the same camera-frame line the residual uses,
    so the product is consistent with :func:`predict_image_line`.
    """
    L_w = ortho.coords
    H = line_transform_matrix(pose)
    H_ex = np.eye(6) if extrinsic is None else line_transform_matrix(extrinsic)
    L_c = H_ex @ H @ L_w
    lp = K.line_projection_matrix() @ L_c[:3]
    front = jac_residual_wrt_lprime(obs, lp) @ jac_lprime_wrt_Lc(K) @ H_ex
    J_xi = front @ jac_Lc_wrt_dxi(pose, L_w)
    J_theta = front @ H @ jac_Lw_wrt_dtheta(ortho)
    return J_xi, J_theta


def point_jacobians(obs: PointObservation, pose: Pose, X_w, K: CameraIntrinsics,
                    depth_min=1e-4):
    """Chained pose (dx6) and point (dx3) Jacobians of the point residual."""
    X_c = pose.transform(np.asarray(X_w, dtype=float))
    x, y, z = X_c
    if z <= depth_min:
        raise BehindCameraError(f"depth {z:.3e} <= {depth_min:.3e}")
    iz = 1.0 / z
    iz2 = iz * iz
    if obs.stereo:
        P = np.array([
            [K.fu * iz, 0.0, -K.fu * x * iz2],
            [0.0, K.fv * iz, -K.fv * y * iz2],
            [K.fu * iz, 0.0, -K.fu * (x - K.baseline) * iz2],
        ])
    else:
        P = np.array([
            [K.fu * iz, 0.0, -K.fu * x * iz2],
            [0.0, K.fv * iz, -K.fv * y * iz2],
        ])
    # X_c(delta) = X_c + rho + phi x X_c to first order
    dXc_dxi = np.hstack([np.eye(3), -skew(X_c)])
    return -P @ dXc_dxi, -P @ pose.rotation


# ---------------------------------------------------------------------------
# Self-check against central finite differences (used by the CLI)
# ---------------------------------------------------------------------------

@dataclass
class JacobianCheckReport:
    trials: int
    step: float
    tol: float
    max_errors: dict
    passed: bool

    def summary_lines(self):
        lines = [f"trials: {self.trials}", f"step: {self.step:g}", f"tol: {self.tol:g}"]
        for name in sorted(self.max_errors):
            lines.append(f"{name}: max_rel_err {self.max_errors[name]:.3e}")
        lines.append("status: " + ("PASS" if self.passed else "FAIL"))
        return lines


def _rel_err(J_num, J_ana):
    scale = max(np.max(np.abs(J_ana)), 1e-6)
    return np.max(np.abs(J_num - J_ana)) / scale


def _central_diff(f, x0, dim_in, step):
    cols = []
    for k in range(dim_in):
        d = np.zeros(dim_in)
        d[k] = step
        cols.append((f(x0 + d) - f(x0 - d)) / (2.0 * step))
    return np.column_stack(cols)


def _sample_config(rng):
    """Well-conditioned random camera/line/point configuration."""
    K = CameraIntrinsics(fu=rng.uniform(300.0, 800.0), fv=rng.uniform(300.0, 800.0),
                         cu=rng.uniform(250.0, 400.0), cv=rng.uniform(180.0, 300.0),
                         baseline=rng.uniform(0.2, 0.8))
    while True:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        R = so3_exp(axis * rng.uniform(0.0, 2.5))
        t = rng.normal(scale=1.5, size=3)
        t[2] = rng.uniform(3.0, 8.0)
        pose = Pose(R, t)
        p1 = rng.uniform(-2.0, 2.0, size=3)
        p2 = rng.uniform(-2.0, 2.0, size=3)
        X = rng.uniform(-2.0, 2.0, size=3)
        if np.linalg.norm(p2 - p1) < 0.5:
            continue
        try:
            line = line_from_endpoints(p1, p2)
        except DegenerateLineError:
            continue
        if pose.transform(X)[2] < 0.1:
            continue
        if pose.transform(p1)[2] < 0.1 or pose.transform(p2)[2] < 0.1:
            continue
        lp = predict_image_line(pose, line, K)
        if np.hypot(lp[0], lp[1]) < 1e-3:
            continue
        obs_line = ImageLineSegment.from_pixels(*rng.uniform(0.0, 600.0, size=4))
        obs_point = PointObservation(rng.uniform(0.0, 600.0, size=2),
                                     u_right=float(rng.uniform(0.0, 600.0)))
        return K, pose, line, orthonormal_from_plucker(line), X, obs_line, obs_point


def run_jacobian_checks(trials=1000, step=1e-6, tol=1e-5, seed=0):
    """Compare every analytic Jacobian block against central differences."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    names = ["residual_wrt_lprime", "lprime_wrt_Lc", "Lc_wrt_Lw", "Lw_wrt_dtheta",
             "Lc_wrt_dxi", "line_chain_xi", "line_chain_theta",
             "point_chain_xi", "point_chain_X"]
    worst = {n: 0.0 for n in names}
    Klp = None
    for _ in range(trials):
        K, pose, line, ortho, X, obs_line, obs_point = _sample_config(rng)
        Klp = K.line_projection_matrix()
        L_w = ortho.coords
        H = line_transform_matrix(pose)
        L_c = H @ L_w
        lp = Klp @ L_c[:3]

        J = jac_residual_wrt_lprime(obs_line, lp)
        J_num = _central_diff(lambda d: line_residual(obs_line, lp + d), np.zeros(3), 3, step)
        worst["residual_wrt_lprime"] = max(worst["residual_wrt_lprime"], _rel_err(J_num, J))

        J = jac_lprime_wrt_Lc(K)
        J_num = _central_diff(lambda d: Klp @ (L_c + d)[:3], np.zeros(6), 6, step)
        worst["lprime_wrt_Lc"] = max(worst["lprime_wrt_Lc"], _rel_err(J_num, J))

        J = jac_Lc_wrt_Lw(pose)
        J_num = _central_diff(lambda d: H @ (L_w + d), np.zeros(6), 6, step)
        worst["Lc_wrt_Lw"] = max(worst["Lc_wrt_Lw"], _rel_err(J_num, J))

        J = jac_Lw_wrt_dtheta(ortho)
        J_num = _central_diff(lambda d: update_orthonormal(ortho, d).coords,
                              np.zeros(4), 4, step)
        worst["Lw_wrt_dtheta"] = max(worst["Lw_wrt_dtheta"], _rel_err(J_num, J))

        J = jac_Lc_wrt_dxi(pose, L_w)
        J_num = _central_diff(
            lambda d: line_transform_matrix(pose_update(pose, d)) @ L_w,
            np.zeros(6), 6, step)
        worst["Lc_wrt_dxi"] = max(worst["Lc_wrt_dxi"], _rel_err(J_num, J))

        J_xi, J_theta = line_jacobians(obs_line, pose, ortho, K)
        J_num = _central_diff(
            lambda d: line_residual(obs_line, predict_image_line(pose_update(pose, d), ortho, K)),
            np.zeros(6), 6, step)
        worst["line_chain_xi"] = max(worst["line_chain_xi"], _rel_err(J_num, J_xi))
        J_num = _central_diff(
            lambda d: line_residual(
                obs_line, predict_image_line(pose, update_orthonormal(ortho, d), K)),
            np.zeros(4), 4, step)
        worst["line_chain_theta"] = max(worst["line_chain_theta"], _rel_err(J_num, J_theta))

        J_xi, J_X = point_jacobians(obs_point, pose, X, K)
        J_num = _central_diff(
            lambda d: point_residual(obs_point, pose_update(pose, d), X, K),
            np.zeros(6), 6, step)
        worst["point_chain_xi"] = max(worst["point_chain_xi"], _rel_err(J_num, J_xi))
        J_num = _central_diff(
            lambda d: point_residual(obs_point, pose, X + d, K),
            np.zeros(3), 3, step)
        worst["point_chain_X"] = max(worst["point_chain_X"], _rel_err(J_num, J_X))

    passed = all(v < tol for v in worst.values())
    return JacobianCheckReport(trials=trials, step=step, tol=tol,
                               max_errors=worst, passed=passed)

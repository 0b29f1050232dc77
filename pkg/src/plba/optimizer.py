"""Robust Levenberg-Marquardt bundle adjustment over point/line factor graphs.

The solver assembles Gauss-Newton normal equations from the analytic
Jacobians, applies a Huber kernel on the squared Mahalanobis norm of every
edge, and damps with an additive lambda on the diagonal.  Landmark blocks
are eliminated with a Schur complement above a size threshold; small
problems use a single dense Cholesky factorization.  Point edges whose
camera-frame depth falls below the near limit (and line edges whose image
normal degenerates) are deactivated for the current iteration and re-enter
when the geometry recovers.

All evaluation is vectorized over edges with a fixed reduction order, so a
given graph always produces the same result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .factor_graph import FactorGraph, GraphValidationError
from .geometry import OrthonormalLine, Pose

DEPTH_MIN = 1e-4        # camera-frame depth at/below which a point edge is inactive
LINE_NORMAL_MIN2 = 1e-20  # squared |(l1,l2)| below which a line edge is inactive


@dataclass
class SolveOptions:
    max_iters: int = 100
    gradient_tol: float = 1e-10
    rel_cost_tol: float = 1e-12
    initial_lambda: float | None = None  # None: 1e-4 * max diagonal of J^T W J
    lambda_max: float = 1e32
    schur_min_landmarks: int = 40


@dataclass
class SolveReport:
    """Outcome of one solve.

    ``termination`` is one of ``gradient_tolerance``, ``rel_cost_tolerance``,
    ``step_tolerance`` (damped step shrank below machine-meaningful size),
    ``max_iterations``, ``lambda_limit`` or ``singular``.
    """

    iterations: int
    initial_cost: float
    final_cost: float
    cost_trace: list
    termination: str
    rejected_steps: int = 0
    final_lambda: float = 0.0

    def summary_lines(self):
        return [
            f"iterations: {self.iterations}",
            f"initial_cost: {self.initial_cost!r}",
            f"final_cost: {self.final_cost!r}",
            f"termination: {self.termination}",
            f"rejected_steps: {self.rejected_steps}",
        ]


# ---------------------------------------------------------------------------
# batched SO(3)/SE(3) helpers
# ---------------------------------------------------------------------------

def _skew_batch(v):
    K = np.zeros(v.shape[:-1] + (3, 3))
    K[..., 0, 1] = -v[..., 2]
    K[..., 0, 2] = v[..., 1]
    K[..., 1, 0] = v[..., 2]
    K[..., 1, 2] = -v[..., 0]
    K[..., 2, 0] = -v[..., 1]
    K[..., 2, 1] = v[..., 0]
    return K


def _so3_exp_batch(phi):
    a = np.linalg.norm(phi, axis=-1)
    small = a < 1e-8
    safe = np.where(small, 1.0, a)
    s = np.where(small, 1.0 - a * a / 6.0, np.sin(safe) / safe)
    c = np.where(small, 0.5 - a * a / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    K = _skew_batch(phi)
    return np.eye(3) + s[..., None, None] * K + c[..., None, None] * (K @ K)


def _se3_exp_batch(xi):
    rho, phi = xi[..., :3], xi[..., 3:]
    a = np.linalg.norm(phi, axis=-1)
    small = a < 1e-8
    safe = np.where(small, 1.0, a)
    s = np.where(small, 1.0 - a * a / 6.0, np.sin(safe) / safe)
    c = np.where(small, 0.5 - a * a / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    d = np.where(small, 1.0 / 6.0 - a * a / 120.0,
                 (safe - np.sin(safe)) / (safe * safe * safe))
    K = _skew_batch(phi)
    K2 = K @ K
    R = np.eye(3) + s[..., None, None] * K + c[..., None, None] * K2
    V = np.eye(3) + c[..., None, None] * K + d[..., None, None] * K2
    return R, np.einsum("...ij,...j->...i", V, rho)


def _project_so3_batch(R):
    U, _, Vt = np.linalg.svd(R)
    det = np.linalg.det(U @ Vt)
    D = np.zeros_like(R)
    D[..., 0, 0] = 1.0
    D[..., 1, 1] = 1.0
    D[..., 2, 2] = np.sign(det)
    return U @ D @ Vt


def _robust(s, delta):
    """Huber value and reweighting factor on squared Mahalanobis norms."""
    rho = s.copy()
    w = np.ones_like(s)
    mask = s > delta * delta
    if np.any(mask):
        sq = np.sqrt(s[mask])
        dm = delta[mask]
        rho[mask] = 2.0 * dm * sq - dm * dm
        w[mask] = dm / sq
    return rho, w


# ---------------------------------------------------------------------------
# problem arrays
# ---------------------------------------------------------------------------

@dataclass
class _PointFamily:
    pose: np.ndarray
    point: np.ndarray
    obs: np.ndarray
    info: np.ndarray
    delta: np.ndarray
    dim: int


@dataclass
class _LineFamily:
    pose: np.ndarray
    line: np.ndarray
    cam: np.ndarray
    xs: np.ndarray
    xe: np.ndarray
    info: np.ndarray
    delta: np.ndarray


@dataclass
class _State:
    R: np.ndarray
    t: np.ndarray
    X: np.ndarray
    U: np.ndarray
    w: np.ndarray

    def copy(self):
        return _State(self.R.copy(), self.t.copy(), self.X.copy(),
                      self.U.copy(), self.w.copy())


class _Problem:
    def __init__(self, graph: FactorGraph):
        graph.validate()
        self.graph = graph
        K = graph.intrinsics
        self.K = K
        self.Klp = K.line_projection_matrix()
        self.t_rl = np.array([-K.baseline, 0.0, 0.0])
        self.S_rl = _skew_batch(self.t_rl[None])[0]

        self.pose_ids = sorted(graph.poses)
        self.point_ids = sorted(graph.points)
        self.line_ids = sorted(graph.lines)
        pidx = {p: k for k, p in enumerate(self.pose_ids)}
        xidx = {p: k for k, p in enumerate(self.point_ids)}
        lidx = {p: k for k, p in enumerate(self.line_ids)}

        self.pose_fixed = np.array([graph.poses[p].fixed for p in self.pose_ids], dtype=bool)
        self.point_fixed = np.array([graph.points[p].fixed for p in self.point_ids], dtype=bool)
        self.line_fixed = np.array([graph.lines[p].fixed for p in self.line_ids], dtype=bool)
        self.free_poses = np.nonzero(~self.pose_fixed)[0]
        self.free_points = np.nonzero(~self.point_fixed)[0]
        self.free_lines = np.nonzero(~self.line_fixed)[0]

        self.R0 = (np.stack([graph.poses[p].pose.rotation for p in self.pose_ids])
                   if self.pose_ids else np.zeros((0, 3, 3)))
        self.t0 = (np.stack([graph.poses[p].pose.translation for p in self.pose_ids])
                   if self.pose_ids else np.zeros((0, 3)))
        self.X0 = (np.stack([graph.points[p].position for p in self.point_ids])
                   if self.point_ids else np.zeros((0, 3)))
        self.U0 = (np.stack([graph.lines[p].line.U for p in self.line_ids])
                   if self.line_ids else np.zeros((0, 3, 3)))
        self.w0 = (np.array([[graph.lines[p].line.w1, graph.lines[p].line.w2]
                             for p in self.line_ids])
                   if self.line_ids else np.zeros((0, 2)))

        def point_family(edges, dim):
            if not edges:
                return _PointFamily(np.zeros(0, dtype=int), np.zeros(0, dtype=int),
                                    np.zeros((0, dim)), np.zeros((0, dim, dim)),
                                    np.zeros(0), dim)
            return _PointFamily(
                np.array([pidx[e.pose_id] for e in edges], dtype=int),
                np.array([xidx[e.point_id] for e in edges], dtype=int),
                np.stack([e.obs.vector for e in edges]),
                np.stack([e.information for e in edges]),
                np.array([np.inf if e.robust_delta is None else e.robust_delta
                          for e in edges]),
                dim)

        self.stereo = point_family([e for e in graph.point_edges if e.obs.stereo], 3)
        self.mono = point_family([e for e in graph.point_edges if not e.obs.stereo], 2)

        ledges = graph.line_edges
        if ledges:
            self.lines = _LineFamily(
                np.array([pidx[e.pose_id] for e in ledges], dtype=int),
                np.array([lidx[e.line_id] for e in ledges], dtype=int),
                np.array([e.camera for e in ledges], dtype=float),
                np.stack([e.obs.xs for e in ledges]),
                np.stack([e.obs.xe for e in ledges]),
                np.stack([e.information for e in ledges]),
                np.array([np.inf if e.robust_delta is None else e.robust_delta
                          for e in ledges]))
        else:
            self.lines = _LineFamily(np.zeros(0, dtype=int), np.zeros(0, dtype=int),
                                     np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)),
                                     np.zeros((0, 2, 2)), np.zeros(0))

    def initial_state(self):
        return _State(self.R0.copy(), self.t0.copy(), self.X0.copy(),
                      self.U0.copy(), self.w0.copy())

    def write_back(self, state: _State):
        for k, pid in enumerate(self.pose_ids):
            self.graph.poses[pid].pose = Pose(state.R[k], state.t[k])
        for k, pid in enumerate(self.point_ids):
            self.graph.points[pid].position = state.X[k].copy()
        for k, lid in enumerate(self.line_ids):
            self.graph.lines[lid].line = OrthonormalLine(
                state.U[k], state.w[k, 0], state.w[k, 1])


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _point_eval(prob: _Problem, state: _State, fam: _PointFamily, with_jac: bool):
    K = prob.K
    Rp = state.R[fam.pose]
    Xc = np.einsum("mij,mj->mi", Rp, state.X[fam.point]) + state.t[fam.pose]
    z = Xc[:, 2]
    active = z > DEPTH_MIN
    iz = 1.0 / np.where(active, z, 1.0)
    pred = np.empty((len(z), fam.dim))
    pred[:, 0] = K.fu * Xc[:, 0] * iz + K.cu
    pred[:, 1] = K.fv * Xc[:, 1] * iz + K.cv
    if fam.dim == 3:
        pred[:, 2] = K.fu * (Xc[:, 0] - K.baseline) * iz + K.cu
    e = fam.obs - pred
    s = np.einsum("mi,mij,mj->m", e, fam.info, e)
    rho, w_rho = _robust(s, fam.delta)
    cost = float(np.sum(rho * active))
    if not with_jac:
        return cost, None
    P = np.zeros((len(z), fam.dim, 3))
    P[:, 0, 0] = K.fu * iz
    P[:, 0, 2] = -K.fu * Xc[:, 0] * iz * iz
    P[:, 1, 1] = K.fv * iz
    P[:, 1, 2] = -K.fv * Xc[:, 1] * iz * iz
    if fam.dim == 3:
        P[:, 2, 0] = K.fu * iz
        P[:, 2, 2] = -K.fu * (Xc[:, 0] - K.baseline) * iz * iz
    dXc = np.zeros((len(z), 3, 6))
    dXc[:, 0, 0] = dXc[:, 1, 1] = dXc[:, 2, 2] = 1.0
    dXc[:, :, 3:] = -_skew_batch(Xc)
    J_xi = -np.einsum("mij,mjk->mik", P, dXc)
    J_X = -np.einsum("mij,mjk->mik", P, Rp)
    W = (w_rho * active)[:, None, None] * fam.info
    return cost, (e, J_xi, J_X, W)


def _line_eval(prob: _Problem, state: _State, with_jac: bool):
    fam = prob.lines
    Rp = state.R[fam.pose]
    tp = state.t[fam.pose]
    t_cam = tp + fam.cam[:, None] * prob.t_rl
    n_all = state.w[:, 0:1] * state.U[:, :, 0]
    v_all = state.w[:, 1:2] * state.U[:, :, 1]
    Rn = np.einsum("mij,mj->mi", Rp, n_all[fam.line])
    Rv = np.einsum("mij,mj->mi", Rp, v_all[fam.line])
    nc = Rn + np.cross(t_cam, Rv)
    lp = nc @ prob.Klp.T
    ln2 = lp[:, 0] ** 2 + lp[:, 1] ** 2
    active = ln2 > LINE_NORMAL_MIN2
    # placeholder norms keep inactive rows finite; their weight is zeroed below
    ln2 = np.where(active, ln2, 1.0)
    ln = np.sqrt(ln2)
    e = np.stack([np.einsum("mi,mi->m", fam.xs, lp),
                  np.einsum("mi,mi->m", fam.xe, lp)], axis=1) / ln[:, None]
    s = np.einsum("mi,mij,mj->m", e, fam.info, e)
    rho, w_rho = _robust(s, fam.delta)
    cost = float(np.sum(rho * active))
    if not with_jac:
        return cost, None
    F = np.empty((len(ln), 2, 3))
    for i, x in enumerate((fam.xs, fam.xe)):
        F[:, i, 0] = x[:, 0] / ln - lp[:, 0] * e[:, i] / ln2
        F[:, i, 1] = x[:, 1] / ln - lp[:, 1] * e[:, i] / ln2
        F[:, i, 2] = 1.0 / ln
    G = np.einsum("mij,jk->mik", F, prob.Klp)  # d e / d n_c
    skew_Rv = _skew_batch(Rv)
    N_rho = -skew_Rv
    N_phi = (-_skew_batch(Rn) - _skew_batch(np.cross(tp, Rv))
             - fam.cam[:, None, None] * np.einsum("ij,mjk->mik", prob.S_rl, skew_Rv))
    J_xi = np.concatenate([np.einsum("mij,mjk->mik", G, N_rho),
                           np.einsum("mij,mjk->mik", G, N_phi)], axis=2)
    # world-line tangent: n and v rows of d L_w / d theta, taken through the rig
    Jn = np.concatenate([-_skew_batch(n_all),
                         (-state.w[:, 1:2] * state.U[:, :, 0])[:, :, None]], axis=2)
    Jv = np.concatenate([-_skew_batch(v_all),
                         (state.w[:, 0:1] * state.U[:, :, 1])[:, :, None]], axis=2)
    RJn = np.einsum("mij,mjk->mik", Rp, Jn[fam.line])
    RJv = np.einsum("mij,mjk->mik", Rp, Jv[fam.line])
    n_block = RJn + np.einsum("mij,mjk->mik", _skew_batch(t_cam), RJv)
    J_theta = np.einsum("mij,mjk->mik", G, n_block)
    W = (w_rho * active)[:, None, None] * fam.info
    return cost, (e, J_xi, J_theta, W)


def _cost_only(prob: _Problem, state: _State):
    cost = 0.0
    for fam in (prob.stereo, prob.mono):
        if len(fam.pose):
            cost += _point_eval(prob, state, fam, with_jac=False)[0]
    if len(prob.lines.pose):
        cost += _line_eval(prob, state, with_jac=False)[0]
    return cost


@dataclass
class _System:
    Hpp: np.ndarray
    Hll_pt: np.ndarray
    Hll_ln: np.ndarray
    Hpl_pt: np.ndarray
    Hpl_ln: np.ndarray
    gp: np.ndarray
    gl_pt: np.ndarray
    gl_ln: np.ndarray


def _assemble(prob: _Problem, state: _State):
    P, Np, Nl = len(prob.pose_ids), len(prob.point_ids), len(prob.line_ids)
    sys = _System(np.zeros((P, 6, 6)), np.zeros((Np, 3, 3)), np.zeros((Nl, 4, 4)),
                  np.zeros((P, Np, 6, 3)), np.zeros((P, Nl, 6, 4)),
                  np.zeros((P, 6)), np.zeros((Np, 3)), np.zeros((Nl, 4)))
    cost = 0.0
    for fam in (prob.stereo, prob.mono):
        if not len(fam.pose):
            continue
        c, (e, J_xi, J_X, W) = _point_eval(prob, state, fam, with_jac=True)
        cost += c
        np.add.at(sys.Hpp, fam.pose,
                  np.einsum("mia,mij,mjb->mab", J_xi, W, J_xi))
        np.add.at(sys.Hll_pt, fam.point,
                  np.einsum("mia,mij,mjb->mab", J_X, W, J_X))
        np.add.at(sys.Hpl_pt, (fam.pose, fam.point),
                  np.einsum("mia,mij,mjb->mab", J_xi, W, J_X))
        np.add.at(sys.gp, fam.pose, np.einsum("mia,mij,mj->ma", J_xi, W, e))
        np.add.at(sys.gl_pt, fam.point, np.einsum("mia,mij,mj->ma", J_X, W, e))
    fam = prob.lines
    if len(fam.pose):
        c, (e, J_xi, J_theta, W) = _line_eval(prob, state, with_jac=True)
        cost += c
        np.add.at(sys.Hpp, fam.pose,
                  np.einsum("mia,mij,mjb->mab", J_xi, W, J_xi))
        np.add.at(sys.Hll_ln, fam.line,
                  np.einsum("mia,mij,mjb->mab", J_theta, W, J_theta))
        np.add.at(sys.Hpl_ln, (fam.pose, fam.line),
                  np.einsum("mia,mij,mjb->mab", J_xi, W, J_theta))
        np.add.at(sys.gp, fam.pose, np.einsum("mia,mij,mj->ma", J_xi, W, e))
        np.add.at(sys.gl_ln, fam.line, np.einsum("mia,mij,mj->ma", J_theta, W, e))
    return cost, sys


def _gradient_inf_norm(prob: _Problem, sys: _System):
    vals = np.concatenate([sys.gp[prob.free_poses].ravel(),
                           sys.gl_pt[prob.free_points].ravel(),
                           sys.gl_ln[prob.free_lines].ravel()])
    return float(np.max(np.abs(vals))) if vals.size else 0.0


def _max_free_diagonal(prob: _Problem, sys: _System):
    parts = [np.einsum("mii->mi", sys.Hpp[prob.free_poses]).ravel(),
             np.einsum("mii->mi", sys.Hll_pt[prob.free_points]).ravel(),
             np.einsum("mii->mi", sys.Hll_ln[prob.free_lines]).ravel()]
    vals = np.concatenate(parts)
    return float(np.max(vals)) if vals.size else 0.0


# ---------------------------------------------------------------------------
# linear solve
# ---------------------------------------------------------------------------

def _free_blocks(prob: _Problem, sys: _System):
    fp, fx, fl = prob.free_poses, prob.free_points, prob.free_lines
    A = sys.Hpp[fp]
    D_pt = sys.Hpl_pt[np.ix_(fp, fx)].transpose(0, 2, 1, 3)
    D_ln = sys.Hpl_ln[np.ix_(fp, fl)].transpose(0, 2, 1, 3)
    return (A, sys.Hll_pt[fx], sys.Hll_ln[fl],
            D_pt.reshape(6 * len(fp), 3 * len(fx)),
            D_ln.reshape(6 * len(fp), 4 * len(fl)),
            sys.gp[fp].ravel(), sys.gl_pt[fx].ravel(), sys.gl_ln[fl].ravel())


def _solve_schur(prob: _Problem, sys: _System, lam: float):
    A, C_pt, C_ln, D_pt, D_ln, gp, gl_pt, gl_ln = _free_blocks(prob, sys)
    Pf = A.shape[0]
    npt, nln = C_pt.shape[0], C_ln.shape[0]
    S = np.zeros((6 * Pf, 6 * Pf))
    for k in range(Pf):
        S[6 * k:6 * k + 6, 6 * k:6 * k + 6] = A[k] + lam * np.eye(6)
    rhs = -gp

    def eliminate(C, D, dim, count):
        Cinv = np.linalg.inv(C + lam * np.eye(dim))
        D3 = D.reshape(6 * Pf, count, dim)
        M = np.einsum("rjk,jkl->rjl", D3, Cinv).reshape(6 * Pf, count * dim)
        return Cinv, M

    Cinv_pt, M_pt = eliminate(C_pt, D_pt, 3, npt) if npt else (None, None)
    Cinv_ln, M_ln = eliminate(C_ln, D_ln, 4, nln) if nln else (None, None)
    if npt:
        S -= M_pt @ D_pt.T
        rhs = rhs + M_pt @ gl_pt
    if nln:
        S -= M_ln @ D_ln.T
        rhs = rhs + M_ln @ gl_ln
    if Pf:
        dp = cho_solve(cho_factor(S, lower=True), rhs)
    else:
        dp = np.zeros(0)
    d_pt = np.zeros((0, 3))
    d_ln = np.zeros((0, 4))
    if npt:
        u = (-gl_pt - D_pt.T @ dp).reshape(npt, 3)
        d_pt = np.einsum("jkl,jl->jk", Cinv_pt, u)
    if nln:
        u = (-gl_ln - D_ln.T @ dp).reshape(nln, 4)
        d_ln = np.einsum("jkl,jl->jk", Cinv_ln, u)
    return dp.reshape(-1, 6), d_pt, d_ln


def _solve_dense(prob: _Problem, sys: _System, lam: float):
    A, C_pt, C_ln, D_pt, D_ln, gp, gl_pt, gl_ln = _free_blocks(prob, sys)
    Pf, npt, nln = A.shape[0], C_pt.shape[0], C_ln.shape[0]
    n = 6 * Pf + 3 * npt + 4 * nln
    H = np.zeros((n, n))
    for k in range(Pf):
        H[6 * k:6 * k + 6, 6 * k:6 * k + 6] = A[k]
    o_pt = 6 * Pf
    o_ln = o_pt + 3 * npt
    for k in range(npt):
        H[o_pt + 3 * k:o_pt + 3 * k + 3, o_pt + 3 * k:o_pt + 3 * k + 3] = C_pt[k]
    for k in range(nln):
        H[o_ln + 4 * k:o_ln + 4 * k + 4, o_ln + 4 * k:o_ln + 4 * k + 4] = C_ln[k]
    H[:o_pt, o_pt:o_ln] = D_pt
    H[o_pt:o_ln, :o_pt] = D_pt.T
    H[:o_pt, o_ln:] = D_ln
    H[o_ln:, :o_pt] = D_ln.T
    g = np.concatenate([gp, gl_pt, gl_ln])
    if n == 0:
        return np.zeros((0, 6)), np.zeros((0, 3)), np.zeros((0, 4))
    delta = cho_solve(cho_factor(H + lam * np.eye(n), lower=True), -g)
    return (delta[:o_pt].reshape(-1, 6),
            delta[o_pt:o_ln].reshape(-1, 3),
            delta[o_ln:].reshape(-1, 4))


def _solve_step(prob: _Problem, sys: _System, lam: float, opts: SolveOptions):
    n_landmarks = len(prob.free_points) + len(prob.free_lines)
    if n_landmarks > opts.schur_min_landmarks:
        return _solve_schur(prob, sys, lam)
    return _solve_dense(prob, sys, lam)


def _apply_delta(prob: _Problem, state: _State, delta):
    dp, d_pt, d_ln = delta
    out = state.copy()
    fp, fx, fl = prob.free_poses, prob.free_points, prob.free_lines
    if len(fp):
        dR, dt = _se3_exp_batch(dp)
        out.R[fp] = _project_so3_batch(dR @ out.R[fp])
        out.t[fp] = np.einsum("mij,mj->mi", dR, out.t[fp]) + dt
    if len(fx):
        out.X[fx] = out.X[fx] + d_pt
    if len(fl):
        out.U[fl] = _project_so3_batch(_so3_exp_batch(d_ln[:, :3]) @ out.U[fl])
        c, s = np.cos(d_ln[:, 3]), np.sin(d_ln[:, 3])
        w1 = out.w[fl, 0] * c - out.w[fl, 1] * s
        w2 = out.w[fl, 1] * c + out.w[fl, 0] * s
        norm = np.hypot(w1, w2)
        out.w[fl, 0] = w1 / norm
        out.w[fl, 1] = w2 / norm
    return out


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------

def total_cost(graph: FactorGraph) -> float:
    """Robustified total cost of the graph at its current estimates."""
    prob = _Problem(graph)
    return _cost_only(prob, prob.initial_state())


@dataclass
class NormalEquations:
    """Dense damped-free normal equations over the free variables.

    Layout: free poses (sorted id, 6 each), then free points (3 each), then
    free lines (4 each).
    """

    H: np.ndarray
    g: np.ndarray
    pose_ids: list
    point_ids: list
    line_ids: list

    def pose_offset(self, pose_id):
        return 6 * self.pose_ids.index(pose_id)

    def point_offset(self, point_id):
        return 6 * len(self.pose_ids) + 3 * self.point_ids.index(point_id)

    def line_offset(self, line_id):
        return 6 * len(self.pose_ids) + 3 * len(self.point_ids) + 4 * self.line_ids.index(line_id)


def normal_equations(graph: FactorGraph) -> NormalEquations:
    """Assemble J^T W J and J^T W e at the current estimates (no damping)."""
    prob = _Problem(graph)
    _, sys = _assemble(prob, prob.initial_state())
    A, C_pt, C_ln, D_pt, D_ln, gp, gl_pt, gl_ln = _free_blocks(prob, sys)
    Pf, npt, nln = A.shape[0], C_pt.shape[0], C_ln.shape[0]
    n = 6 * Pf + 3 * npt + 4 * nln
    H = np.zeros((n, n))
    o_pt, o_ln = 6 * Pf, 6 * Pf + 3 * npt
    for k in range(Pf):
        H[6 * k:6 * k + 6, 6 * k:6 * k + 6] = A[k]
    for k in range(npt):
        H[o_pt + 3 * k:o_pt + 3 * k + 3, o_pt + 3 * k:o_pt + 3 * k + 3] = C_pt[k]
    for k in range(nln):
        H[o_ln + 4 * k:o_ln + 4 * k + 4, o_ln + 4 * k:o_ln + 4 * k + 4] = C_ln[k]
    H[:o_pt, o_pt:o_ln] = D_pt
    H[o_pt:o_ln, :o_pt] = D_pt.T
    H[:o_pt, o_ln:] = D_ln
    H[o_ln:, :o_pt] = D_ln.T
    g = np.concatenate([gp, gl_pt, gl_ln])
    return NormalEquations(H, g,
                           [prob.pose_ids[i] for i in prob.free_poses],
                           [prob.point_ids[i] for i in prob.free_points],
                           [prob.line_ids[i] for i in prob.free_lines])


def solve_lm(graph: FactorGraph, options: SolveOptions | None = None) -> SolveReport:
    """Levenberg-Marquardt with multiplicative lambda schedule (x2 / x1/3).

    Updates the graph vertices in place and returns the report.  Accepted
    steps never increase the cost; the trace holds the accepted sequence.
    """
    opts = options or SolveOptions()
    prob = _Problem(graph)
    state = prob.initial_state()
    cost = _cost_only(prob, state)
    if not np.isfinite(cost):
        raise GraphValidationError("initial cost is not finite")
    trace = [cost]
    initial_cost = cost
    lam = opts.initial_lambda
    iterations = 0
    rejected = 0
    terminated = None

    while iterations < opts.max_iters and terminated is None:
        _, sys = _assemble(prob, state)
        gmax = _gradient_inf_norm(prob, sys)
        if gmax <= opts.gradient_tol:
            terminated = "gradient_tolerance"
            break
        if lam is None:
            md = _max_free_diagonal(prob, sys)
            lam = 1e-4 * md if md > 0.0 else 1e-4
        while True:
            try:
                delta = _solve_step(prob, sys, lam, opts)
            except np.linalg.LinAlgError:
                delta = None
            if delta is not None:
                step_inf = max(float(np.max(np.abs(d))) if d.size else 0.0 for d in delta)
                scale = 1.0 + max(float(np.max(np.abs(state.t))) if state.t.size else 0.0,
                                  float(np.max(np.abs(state.X))) if state.X.size else 0.0)
                if step_inf <= 1e-15 * scale:
                    terminated = "step_tolerance"
                    break
                trial = _apply_delta(prob, state, delta)
                new_cost = _cost_only(prob, trial)
                # equality means the damped step was a numerical no-op; accept
                # it so the zero relative drop terminates the solve cleanly
                if np.isfinite(new_cost) and new_cost <= cost:
                    rel_drop = (cost - new_cost) / max(cost, 1e-300)
                    state = trial
                    cost = new_cost
                    trace.append(cost)
                    iterations += 1
                    lam = max(lam / 3.0, 1e-18)
                    if rel_drop < opts.rel_cost_tol:
                        terminated = "rel_cost_tolerance"
                    break
            rejected += 1
            lam = lam * 2.0 if lam > 0.0 else 1e-12
            if lam > opts.lambda_max:
                terminated = "singular" if delta is None else "lambda_limit"
                break

    if terminated is None:
        terminated = "max_iterations"
    if iterations > 0:  # no accepted step: leave the vertices bit-identical
        prob.write_back(state)
    return SolveReport(iterations=iterations, initial_cost=initial_cost,
                       final_cost=cost, cost_trace=trace, termination=terminated,
                       rejected_steps=rejected, final_lambda=0.0 if lam is None else lam)


def motion_only_ba(graph: FactorGraph, pose_id: int,
                   options: SolveOptions | None = None) -> SolveReport:
    """Optimize a single pose against fixed landmarks."""
    if pose_id not in graph.poses:
        raise GraphValidationError(f"unknown pose id {pose_id}")
    pe, le = graph.edges_of_pose(pose_id)
    if not pe and not le:
        raise GraphValidationError(f"pose {pose_id} has no edges")
    saved = _flag_snapshot(graph)
    try:
        for pid, v in graph.poses.items():
            v.fixed = pid != pose_id
        for v in graph.points.values():
            v.fixed = True
        for v in graph.lines.values():
            v.fixed = True
        return solve_lm(graph, options)
    finally:
        _flag_restore(graph, saved)


def local_ba(graph: FactorGraph, active_pose_ids,
             options: SolveOptions | None = None) -> SolveReport:
    """Optimize a pose window and the landmarks it observes; the rest is fixed.

    An empty window fixes everything, so the solve is a no-op that leaves
    the graph untouched.
    """
    active = {int(p) for p in active_pose_ids}
    missing = active - set(graph.poses)
    if missing:
        raise GraphValidationError(f"unknown pose ids in window: {sorted(missing)}")
    seen_points = {e.point_id for e in graph.point_edges if e.pose_id in active}
    seen_lines = {e.line_id for e in graph.line_edges if e.pose_id in active}
    saved = _flag_snapshot(graph)
    try:
        for pid, v in graph.poses.items():
            if pid not in active:
                v.fixed = True
        for pid, v in graph.points.items():
            if pid not in seen_points:
                v.fixed = True
        for lid, v in graph.lines.items():
            if lid not in seen_lines:
                v.fixed = True
        return solve_lm(graph, options)
    finally:
        _flag_restore(graph, saved)


def _flag_snapshot(graph: FactorGraph):
    return ({k: v.fixed for k, v in graph.poses.items()},
            {k: v.fixed for k, v in graph.points.items()},
            {k: v.fixed for k, v in graph.lines.items()})


def _flag_restore(graph: FactorGraph, saved):
    for k, f in saved[0].items():
        graph.poses[k].fixed = f
    for k, f in saved[1].items():
        graph.points[k].fixed = f
    for k, f in saved[2].items():
        graph.lines[k].fixed = f

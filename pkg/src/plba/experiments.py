"""Monte-Carlo odometry benchmark comparing point, line, and fused back-ends.

The pipeline is deliberately loop-free: each new frame is estimated from the
previous one alone (landmarks triangulated from the previous stereo pair,
then a two-frame bundle adjustment with the previous pose held fixed), so
error accumulates along the trajectory exactly as it would in an odometry
front-end without loop closure.  Relative-pose error over the chain is the
quantity the feature modes are compared on.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, replace

import numpy as np

from .evaluation import (Trajectory, ate, final_drift, rpe_rmse,
                         trajectory_from_world_to_camera)
from .factor_graph import DEFAULT_HUBER_DELTA, FactorGraph
from .measurement import ImageLineSegment, PointObservation
from .optimizer import SolveOptions, solve_lm
from .simulator import (InitConfig, SimConfig, _triangulate_line,
                        _triangulate_point, build_graph_from_sim,
                        generate_house_scene, generate_trajectory,
                        render_observations)

FEATURE_MODES = ("points", "lines", "points+lines")


@dataclass(frozen=True)
class OdometryOptions:
    """Per-step estimation settings for the loop-free odometry chain."""

    huber_delta: float | None = DEFAULT_HUBER_DELTA
    max_point_depth: float = 30.0
    max_iters: int = 12
    rel_cost_tol: float = 1e-6


@dataclass(frozen=True)
class RunMetrics:
    run: int
    seed: int
    feature_mode: str
    rpe_trans: float
    rpe_rot: float
    ate: float
    drift: float
    mean_iterations: float

    CSV_FIELDS = ("run", "seed", "feature_mode", "rpe_trans", "rpe_rot",
                  "ate", "drift", "mean_iterations")


def _check_mode(feature_mode: str):
    if feature_mode not in FEATURE_MODES:
        raise ValueError(f"unknown feature mode {feature_mode!r}")
    return feature_mode in ("points", "points+lines"), \
        feature_mode in ("lines", "points+lines")


def run_odometry(observations, intrinsics, feature_mode: str,
                 options: OdometryOptions | None = None):
    """Chain two-frame bundle adjustments over the sequence.

    Returns the estimated world-to-camera poses (one per frame, the first
    anchored at ground truth) and the mean number of LM iterations per step.
    """
    opt = options or OdometryOptions()
    use_p, use_l = _check_mode(feature_mode)
    solve_options = SolveOptions(max_iters=opt.max_iters,
                                 rel_cost_tol=opt.rel_cost_tol)
    est = [observations[0].true_pose]
    iters = []
    for k in range(1, len(observations)):
        prev, cur = observations[k - 1], observations[k]
        graph = FactorGraph(intrinsics)
        graph.add_pose(0, est[-1], fixed=True)
        graph.add_pose(1, est[-1], fixed=False)
        if use_p:
            cur_pts = {o.point_id: o for o in cur.points}
            for o in prev.points:
                q = cur_pts.get(o.point_id)
                if q is None:
                    continue
                X = _triangulate_point(o, est[-1], intrinsics)
                if X is None or est[-1].transform(X)[2] > opt.max_point_depth:
                    continue
                graph.add_point(o.point_id, X)
                for pose_id, obs in ((0, o), (1, q)):
                    graph.add_point_edge(
                        pose_id, o.point_id,
                        PointObservation(np.array([obs.u, obs.v]),
                                         u_right=obs.u_right),
                        robust_delta=opt.huber_delta)
        if use_l:
            cur_lns = {o.line_id: o for o in cur.lines}
            for o in prev.lines:
                q = cur_lns.get(o.line_id)
                if q is None or (q.left is None and q.right is None):
                    continue
                line = _triangulate_line(o, est[-1], intrinsics)
                if line is None:
                    continue
                graph.add_line(o.line_id, line)
                for pose_id, obs in ((0, o), (1, q)):
                    for cam, seg in ((0, obs.left), (1, obs.right)):
                        if seg is None:
                            continue
                        graph.add_line_edge(
                            pose_id, o.line_id,
                            ImageLineSegment.from_pixels(seg.start[0], seg.start[1],
                                                         seg.end[0], seg.end[1]),
                            robust_delta=opt.huber_delta, camera=cam)
        point_edges, line_edges = graph.edges_of_pose(1)
        if not point_edges and not line_edges:
            # nothing matched into this frame: coast on the previous estimate
            est.append(est[-1])
            iters.append(0)
            continue
        report = solve_lm(graph, solve_options)
        iters.append(report.iterations)
        est.append(graph.poses[1].pose)
    return est, float(np.mean(iters)) if iters else 0.0


def run_single(cfg: SimConfig, feature_mode: str,
               options: OdometryOptions | None = None):
    """One full odometry run; returns (metrics sans run index, est, gt)."""
    scene = generate_house_scene(cfg.n_points, cfg.seed)
    poses = generate_trajectory(cfg)
    observations = render_observations(scene, poses, cfg)
    return run_on_observations(observations, cfg, feature_mode, options)


def run_on_observations(observations, cfg: SimConfig, feature_mode: str,
                        options: OdometryOptions | None = None):
    est_poses, mean_iters = run_odometry(observations, cfg.intrinsics,
                                         feature_mode, options)
    stamps = [f.timestamp for f in observations]
    est = trajectory_from_world_to_camera(stamps, est_poses)
    gt = trajectory_from_world_to_camera(stamps, [f.true_pose for f in observations])
    rpe_t, rpe_r = rpe_rmse(est, gt, delta=1)
    metrics = RunMetrics(run=-1, seed=cfg.seed, feature_mode=feature_mode,
                         rpe_trans=rpe_t, rpe_rot=rpe_r,
                         ate=ate(est, gt, align=False),
                         drift=final_drift(est, gt),
                         mean_iterations=mean_iters)
    return metrics, est, gt


def run_monte_carlo(cfg: SimConfig, runs: int, feature_modes=FEATURE_MODES,
                    options: OdometryOptions | None = None,
                    keep_trajectories: bool = False):
    """Repeat the experiment with per-run seeds ``cfg.seed + run index``.

    Every feature mode sees the identical rendered observations within a
    run, so the comparison isolates the feature choice.  Returns a dict
    mapping mode name to the list of per-run metrics (and, optionally, a
    parallel dict of (est, gt) trajectory pairs).
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    for mode in feature_modes:
        _check_mode(mode)
    results = {mode: [] for mode in feature_modes}
    trajectories = {mode: [] for mode in feature_modes}
    for run in range(runs):
        run_cfg = replace(cfg, seed=cfg.seed + run)
        scene = generate_house_scene(run_cfg.n_points, run_cfg.seed)
        poses = generate_trajectory(run_cfg)
        observations = render_observations(scene, poses, run_cfg)
        for mode in feature_modes:
            metrics, est, gt = run_on_observations(observations, run_cfg,
                                                   mode, options)
            results[mode].append(replace(metrics, run=run))
            if keep_trajectories:
                trajectories[mode].append((est, gt))
    if keep_trajectories:
        return results, trajectories
    return results


def run_bundle_adjustment(cfg: SimConfig, init: InitConfig, feature_mode: str,
                          solve_options: SolveOptions | None = None):
    """Simulate a sequence and refine all frames in one joint optimization.

    Unlike the odometry chain this uses every observation at once (the orbit
    implicitly closes), so with mild noise the recovered trajectory is far
    more accurate.  Returns (graph, report, metrics, est, gt).
    """
    _check_mode(feature_mode)
    scene = generate_house_scene(cfg.n_points, cfg.seed)
    poses = generate_trajectory(cfg)
    observations = render_observations(scene, poses, cfg)
    graph = build_graph_from_sim(scene, observations, cfg, init, feature_mode)
    report = solve_lm(graph, solve_options or SolveOptions())
    stamps = [f.timestamp for f in observations]
    est = trajectory_from_world_to_camera(
        stamps, [graph.poses[k].pose for k in range(len(observations))])
    gt = trajectory_from_world_to_camera(stamps, poses)
    rpe_t, rpe_r = rpe_rmse(est, gt, delta=1)
    metrics = RunMetrics(run=0, seed=cfg.seed, feature_mode=feature_mode,
                         rpe_trans=rpe_t, rpe_rot=rpe_r,
                         ate=ate(est, gt, align=False),
                         drift=final_drift(est, gt),
                         mean_iterations=float(report.iterations))
    return graph, report, metrics, est, gt


SUMMARY_FIELDS = ("feature_mode", "n_runs", "rpe_trans_mean", "rpe_trans_median",
                  "rpe_trans_std", "rpe_rot_mean", "ate_mean", "drift_mean")


def summarize(rows) -> dict:
    """Aggregate one feature mode's runs; order-independent statistics."""
    rows = list(rows)
    if not rows:
        raise ValueError("no runs to summarize")
    tr = [r.rpe_trans for r in rows]
    return {
        "feature_mode": rows[0].feature_mode,
        "n_runs": len(rows),
        "rpe_trans_mean": statistics.fmean(tr),
        "rpe_trans_median": statistics.median(tr),
        "rpe_trans_std": statistics.stdev(tr) if len(tr) > 1 else 0.0,
        "rpe_rot_mean": statistics.fmean(r.rpe_rot for r in rows),
        "ate_mean": statistics.fmean(r.ate for r in rows),
        "drift_mean": statistics.fmean(r.drift for r in rows),
    }


def _csv_cell(value):
    return repr(float(value)) if isinstance(value, float) else str(value)


def runs_csv(results: dict) -> str:
    """Per-run metric rows for every feature mode, as CSV text."""
    lines = [",".join(RunMetrics.CSV_FIELDS)]
    for mode in results:
        for r in results[mode]:
            lines.append(",".join(_csv_cell(getattr(r, f))
                                  for f in RunMetrics.CSV_FIELDS))
    return "\n".join(lines) + "\n"


def summary_csv(results: dict) -> str:
    lines = [",".join(SUMMARY_FIELDS)]
    for mode in results:
        s = summarize(results[mode])
        lines.append(",".join(_csv_cell(s[f]) for f in SUMMARY_FIELDS))
    return "\n".join(lines) + "\n"

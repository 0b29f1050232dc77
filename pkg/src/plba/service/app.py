"""HTTP service exposing the simulator, optimizer, and evaluation pipeline.

Every endpoint is pure: inputs arrive in the request body (file contents as
strings) and generated artifacts come back in the ``files`` map of the
response, so the service never touches the filesystem.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..evaluation import (ate, final_drift, rpe_rmse, trajectory_from_text,
                          trajectory_from_world_to_camera, trajectory_to_text)
from ..experiments import (FEATURE_MODES, run_bundle_adjustment,
                           run_monte_carlo, runs_csv, summarize, summary_csv)
from ..export import lines_csv, map_to_ply, points_csv, trajectory_csv
from ..factor_graph import graph_from_text, graph_to_text
from ..measurement import run_jacobian_checks
from ..optimizer import SolveOptions, solve_lm
from ..simulator import (InitConfig, SimConfig, generate_house_scene,
                         generate_trajectory, observations_to_text,
                         render_observations, scene_to_text)
from .schemas import (CheckJacobiansRequest, EvaluateRequest, ExportRequest,
                      FilesResponse, SimulateRequest, SolveRequest)


def _sim_config(req) -> SimConfig:
    return SimConfig(n_frames=req.frames, n_points=req.points,
                     noise_sigma=req.noise_sigma, seed=req.seed)


def _simulate(req: SimulateRequest) -> FilesResponse:
    cfg = _sim_config(req)
    scene = generate_house_scene(cfg.n_points, cfg.seed)
    poses = generate_trajectory(cfg)
    observations = render_observations(scene, poses, cfg)
    gt = trajectory_from_world_to_camera([f.timestamp for f in observations], poses)
    n_point_obs = sum(len(f.points) for f in observations)
    n_line_obs = sum((o.left is not None) + (o.right is not None)
                     for f in observations for o in f.lines)
    return FilesResponse(
        files={"scene.txt": scene_to_text(scene),
               "observations.txt": observations_to_text(observations),
               "groundtruth.tum": trajectory_to_text(gt)},
        summary={"n_lines": len(scene.lines), "n_points": len(scene.points),
                 "n_frames": len(observations), "n_point_obs": n_point_obs,
                 "n_line_obs": n_line_obs, "seed": cfg.seed})


def _solve_graph(req: SolveRequest) -> FilesResponse:
    graph = graph_from_text(req.graph)
    report = solve_lm(graph, SolveOptions(max_iters=req.max_iters))
    return FilesResponse(
        files={"graph_optimized.txt": graph_to_text(graph),
               "report.txt": "\n".join(report.summary_lines()) + "\n"},
        summary={"initial_cost": report.initial_cost,
                 "final_cost": report.final_cost,
                 "iterations": report.iterations,
                 "termination": report.termination})


def _solve_monte_carlo(req: SolveRequest) -> FilesResponse:
    cfg = _sim_config(req)
    modes = FEATURE_MODES if req.feature_mode == "all" else (req.feature_mode,)
    results, trajectories = run_monte_carlo(cfg, req.runs, feature_modes=modes,
                                            keep_trajectories=True)
    files = {"runs.csv": runs_csv(results), "summary.csv": summary_csv(results)}
    for mode in modes:
        for run, (est, gt) in enumerate(trajectories[mode]):
            files[f"est_{mode}_{run:03d}.tum"] = trajectory_to_text(est)
        if trajectories[mode]:
            files[f"gt_{mode}_000.tum"] = trajectory_to_text(trajectories[mode][0][1])
    return FilesResponse(
        files=files,
        summary={mode: summarize(results[mode]) for mode in modes})


def _solve_single(req: SolveRequest) -> FilesResponse:
    if req.feature_mode == "all":
        raise ValueError("feature_mode 'all' requires runs >= 1")
    cfg = _sim_config(req)
    init = InitConfig(mode=req.init_mode, pose_sigma=req.pose_sigma, seed=req.seed)
    solve_options = SolveOptions(max_iters=req.max_iters)
    graph, report, metrics, est, gt = run_bundle_adjustment(
        cfg, init, req.feature_mode, solve_options)
    return FilesResponse(
        files={"est.tum": trajectory_to_text(est),
               "gt.tum": trajectory_to_text(gt),
               "report.txt": "\n".join(report.summary_lines()) + "\n",
               "metrics.csv": runs_csv({req.feature_mode: [metrics]})},
        summary={"ate": metrics.ate, "rpe_trans": metrics.rpe_trans,
                 "rpe_rot": metrics.rpe_rot, "drift": metrics.drift,
                 "initial_cost": report.initial_cost,
                 "final_cost": report.final_cost,
                 "iterations": report.iterations,
                 "termination": report.termination})


def _evaluate(req: EvaluateRequest) -> FilesResponse:
    est = trajectory_from_text(req.est)
    gt = trajectory_from_text(req.gt)
    rpe_t, rpe_r = rpe_rmse(est, gt, delta=req.delta)
    values = {"rpe_trans": rpe_t, "rpe_rot": rpe_r,
              "ate": ate(est, gt, align=req.align),
              "ate_unaligned": ate(est, gt, align=False),
              "drift": final_drift(est, gt)}
    csv = (",".join(values) + "\n"
           + ",".join(repr(float(v)) for v in values.values()) + "\n")
    return FilesResponse(files={"metrics.csv": csv}, summary=values)


def _export(req: ExportRequest) -> FilesResponse:
    graph = graph_from_text(req.graph)
    files = {}
    if req.format in ("both", "ply"):
        files["map.ply"] = map_to_ply(graph)
    if req.format in ("both", "csv"):
        files["points.csv"] = points_csv(graph)
        files["lines.csv"] = lines_csv(graph)
        files["trajectory.csv"] = trajectory_csv(graph)
    return FilesResponse(
        files=files,
        summary={"n_poses": len(graph.poses), "n_points": len(graph.points),
                 "n_lines": len(graph.lines)})


def create_app() -> FastAPI:
    app = FastAPI(title="plba", version=__version__)

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/simulate", response_model=FilesResponse)
    def simulate(req: SimulateRequest):
        return _simulate(req)

    @app.post("/solve", response_model=FilesResponse)
    def solve(req: SolveRequest):
        if req.graph is not None:
            return _solve_graph(req)
        if req.runs is not None:
            return _solve_monte_carlo(req)
        return _solve_single(req)

    @app.post("/check-jacobians", response_model=FilesResponse)
    def check_jacobians(req: CheckJacobiansRequest):
        report = run_jacobian_checks(trials=req.trials, step=req.step,
                                     tol=req.tolerance, seed=req.seed)
        summary = {"passed": report.passed, "trials": report.trials,
                   "max_rel_error": max(report.max_errors.values(), default=0.0),
                   "blocks": report.max_errors}
        if req.trials == 0:
            summary["warning"] = "no trials requested; nothing was checked"
        return FilesResponse(
            files={"jacobian_report.txt": "\n".join(report.summary_lines()) + "\n"},
            summary=summary)

    @app.post("/evaluate", response_model=FilesResponse)
    def evaluate(req: EvaluateRequest):
        return _evaluate(req)

    @app.post("/export", response_model=FilesResponse)
    def export(req: ExportRequest):
        return _export(req)

    return app

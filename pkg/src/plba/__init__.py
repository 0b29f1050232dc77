"""Point-and-line bundle adjustment: geometry, optimizer, simulator, metrics.

The back-end of a stereo visual SLAM system: minimal orthonormal
parameterization of 3D lines alongside points, analytic Jacobians of the
re-projection errors, robust Levenberg-Marquardt bundle adjustment over a
factor graph, plus a synthetic stereo benchmark and trajectory metrics.
"""

from .evaluation import Trajectory, ate, read_tum, rpe_rmse, write_tum
from .factor_graph import (DEFAULT_HUBER_DELTA, FactorGraph,
                           GraphValidationError, load_graph, save_graph)
from .geometry import (CameraIntrinsics, DegenerateLineError, OrthonormalLine,
                       PlueckerLine, Pose, line_from_endpoints,
                       orthonormal_from_plucker, plucker_from_orthonormal,
                       plucker_from_points, pose_update, project_line,
                       transform_line, trim_endpoints, update_orthonormal)
from .measurement import (ImageLineSegment, PointObservation, line_jacobians,
                          line_residual, point_jacobians, point_residual,
                          run_jacobian_checks)
from .optimizer import (SolveOptions, SolveReport, local_ba, motion_only_ba,
                        normal_equations, solve_lm, total_cost)
from .simulator import (InitConfig, Scene, SimConfig, build_graph_from_sim,
                        generate_house_scene, generate_trajectory,
                        render_observations)

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics", "DEFAULT_HUBER_DELTA", "DegenerateLineError",
    "FactorGraph", "GraphValidationError", "ImageLineSegment", "InitConfig",
    "OrthonormalLine", "PlueckerLine", "PointObservation", "Pose", "Scene",
    "SimConfig", "SolveOptions", "SolveReport", "Trajectory", "ate",
    "build_graph_from_sim", "generate_house_scene", "generate_trajectory",
    "line_from_endpoints", "line_jacobians", "line_residual", "load_graph",
    "local_ba", "motion_only_ba", "normal_equations",
    "orthonormal_from_plucker", "plucker_from_orthonormal",
    "plucker_from_points", "point_jacobians", "point_residual", "pose_update",
    "project_line", "read_tum", "render_observations", "rpe_rmse",
    "run_jacobian_checks", "save_graph", "solve_lm", "total_cost",
    "transform_line", "trim_endpoints", "update_orthonormal", "write_tum",
]

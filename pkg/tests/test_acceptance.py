"""End-to-end acceptance gate.

Each test pins one of the headline guarantees of the package: analytic
Jacobians against finite differences at scale, representation round trips,
exact recovery on noise-free data, the point/line/fused accuracy ordering
across feature-density regimes, optimizer sanity, the clipping oracle,
closed-form metric values, and byte-level determinism of the CLI.
"""

import time
from statistics import fmean

import numpy as np
import pytest

from plba.cli import main
from plba.evaluation import (Trajectory, ate, rpe_rmse,
                             trajectory_from_world_to_camera)
from plba.experiments import run_bundle_adjustment, run_monte_carlo
from plba.factor_graph import graph_from_text, graph_to_text
from plba.frontend import Segment2D, liang_barsky_clip
from plba.geometry import (Pose, line_from_endpoints, orthonormal_from_plucker,
                           plucker_from_orthonormal, so3_exp, transform_line)
from plba.measurement import run_jacobian_checks
from plba.optimizer import SolveOptions, normal_equations, solve_lm
from plba.simulator import (InitConfig, SimConfig, build_graph_from_sim,
                            generate_house_scene, generate_trajectory,
                            render_observations)

# ---------------------------------------------------------------------------
# 1. Analytic Jacobians match central finite differences at scale.


def test_jacobians_match_finite_differences_at_scale():
    start = time.perf_counter()
    report = run_jacobian_checks(trials=1000, step=1e-6, tol=1e-5, seed=0)
    elapsed = time.perf_counter() - start
    assert report.passed
    assert report.trials == 1000
    for block, err in report.max_errors.items():
        assert err < 1e-5, f"{block}: {err}"
    assert elapsed < 10.0


# ---------------------------------------------------------------------------
# 2. Representation round trips and the construction/transform convention.


def random_line(rng):
    while True:
        p, q = rng.normal(scale=3.0, size=(2, 3))
        if np.linalg.norm(q - p) > 1e-2:
            return p, q


def projective_gap(a, b):
    """Distance between two unit Pluecker 6-vectors up to overall sign."""
    return min(np.linalg.norm(a.coords - b.coords),
               np.linalg.norm(a.coords + b.coords))


def test_plucker_orthonormal_round_trip_at_scale():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(10_000):
        p, q = random_line(rng)
        line = line_from_endpoints(p, q)
        back = plucker_from_orthonormal(orthonormal_from_plucker(line))
        worst = max(worst, projective_gap(line, back))
    assert worst < 1e-10


def test_line_transform_commutes_with_construction_at_scale():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(10_000):
        p, q = random_line(rng)
        T = Pose(so3_exp(rng.normal(size=3)), rng.normal(scale=2.0, size=3))
        transformed = transform_line(T, line_from_endpoints(p, q))
        constructed = line_from_endpoints(T.transform(p), T.transform(q))
        worst = max(worst, projective_gap(transformed, constructed))
    assert worst < 1e-10


# ---------------------------------------------------------------------------
# 3. Exact recovery on noise-free observations from a perturbed start.


def test_noise_free_bundle_adjustment_recovers_exactly():
    cfg = SimConfig(n_frames=100, n_points=200, noise_sigma=0.0, seed=0)
    init = InitConfig(mode="perturbed", pose_sigma=0.05, seed=0)
    start = time.perf_counter()
    graph, report, metrics, est, gt = run_bundle_adjustment(
        cfg, init, "points+lines", SolveOptions())
    elapsed = time.perf_counter() - start
    assert metrics.ate < 1e-6
    assert report.final_cost < 1e-12
    assert elapsed < 30.0


# ---------------------------------------------------------------------------
# 4. Accuracy ordering across feature-density regimes (25-run Monte Carlo,
#    1 px observation noise, loop-free odometry chains).

N_RUNS = 25


def run_regime(n_points):
    cfg = SimConfig(n_frames=50, n_points=n_points, noise_sigma=1.0, seed=0)
    start = time.perf_counter()
    results = run_monte_carlo(cfg, N_RUNS)
    return results, time.perf_counter() - start


@pytest.fixture(scope="module")
def abundant_regime():
    return run_regime(n_points=200)


@pytest.fixture(scope="module")
def sparse_regime():
    return run_regime(n_points=12)


def rpe_by_mode(results):
    return {mode: [m.rpe_trans for m in metrics]
            for mode, metrics in results.items()}


def test_points_beat_lines_when_points_are_abundant(abundant_regime):
    rpe = rpe_by_mode(abundant_regime[0])
    wins = sum(p < l for p, l in zip(rpe["points"], rpe["lines"]))
    assert wins >= 18, f"points won only {wins}/{N_RUNS} runs"


def test_lines_beat_points_when_points_are_sparse(sparse_regime):
    rpe = rpe_by_mode(sparse_regime[0])
    wins = sum(l < p for p, l in zip(rpe["points"], rpe["lines"]))
    assert wins >= 18, f"lines won only {wins}/{N_RUNS} runs"


def test_fusion_is_never_much_worse_than_the_best_single_mode(
        abundant_regime, sparse_regime):
    for results, _ in (abundant_regime, sparse_regime):
        rpe = rpe_by_mode(results)
        fused = fmean(rpe["points+lines"])
        best = min(fmean(rpe["points"]), fmean(rpe["lines"]))
        assert fused <= 1.05 * best


def test_rpe_magnitudes_are_in_the_plausible_band(abundant_regime,
                                                  sparse_regime):
    for results, _ in (abundant_regime, sparse_regime):
        for mode, values in rpe_by_mode(results).items():
            mean = fmean(values)
            assert 0.01 <= mean <= 0.5, f"{mode}: {mean}"


def test_regime_benchmark_fits_the_time_budget(abundant_regime,
                                               sparse_regime):
    assert abundant_regime[1] + sparse_regime[1] < 600.0


# ---------------------------------------------------------------------------
# 5. Optimizer sanity: monotone accepted steps, and line edges leave the
#    point blocks of the normal equations untouched, bitwise.


def noisy_graph():
    cfg = SimConfig(n_frames=8, n_points=60, noise_sigma=1.0, seed=5)
    scene = generate_house_scene(cfg.n_points, cfg.seed)
    frames = render_observations(scene, generate_trajectory(cfg), cfg)
    return build_graph_from_sim(scene, frames, cfg,
                                InitConfig(mode="perturbed", pose_sigma=0.03,
                                           seed=5))


def test_accepted_lm_steps_never_increase_cost():
    report = solve_lm(noisy_graph())
    trace = report.cost_trace
    assert len(trace) >= 2
    assert all(trace[i + 1] <= trace[i] for i in range(len(trace) - 1))
    assert report.initial_cost == trace[0]
    assert report.final_cost == trace[-1]


def test_removing_line_edges_preserves_point_blocks_bitwise():
    fused = noisy_graph()
    points_only = graph_from_text(graph_to_text(fused))
    points_only.line_edges.clear()
    points_only.lines.clear()
    nf = normal_equations(fused)
    npo = normal_equations(points_only)
    assert nf.pose_ids == npo.pose_ids and nf.point_ids == npo.point_ids
    o_pose = 6 * len(nf.pose_ids)
    o_line = o_pose + 3 * len(nf.point_ids)
    assert np.array_equal(nf.H[o_pose:o_line, o_pose:o_line],
                          npo.H[o_pose:, o_pose:])
    assert np.array_equal(nf.H[:o_pose, o_pose:o_line], npo.H[:o_pose, o_pose:])
    assert np.array_equal(nf.g[o_pose:o_line], npo.g[o_pose:])


# ---------------------------------------------------------------------------
# 6. Clipping against a dense-sampling oracle.


def oracle_clip(seg, rect, samples=2048):
    """Clip by dense parameter sampling plus bisection refinement."""
    xmin, ymin, xmax, ymax = rect
    d = seg.end - seg.start

    def inside(t):
        x, y = seg.start + t * d
        return xmin <= x <= xmax and ymin <= y <= ymax

    ts = np.linspace(0.0, 1.0, samples + 1)
    pts = seg.start[None, :] + ts[:, None] * d[None, :]
    ins = ((pts[:, 0] >= xmin) & (pts[:, 0] <= xmax)
           & (pts[:, 1] >= ymin) & (pts[:, 1] <= ymax))
    if not ins.any():
        return None
    first = int(np.argmax(ins))
    last = int(len(ins) - 1 - np.argmax(ins[::-1]))

    def bisect(t_out, t_in):
        # keep t_in inside and t_out outside, shrink to the boundary
        for _ in range(80):
            mid = 0.5 * (t_out + t_in)
            if inside(mid):
                t_in = mid
            else:
                t_out = mid
        return t_in

    t0 = 0.0 if ins[0] else bisect(ts[first - 1], ts[first])
    t1 = 1.0 if ins[-1] else bisect(ts[last + 1], ts[last])
    start = seg.start + t0 * d
    end = seg.start + t1 * d
    if np.linalg.norm(end - start) < 1e-12:
        return None
    return start, end


def test_segment_clipping_matches_dense_sampling_oracle():
    rng = np.random.default_rng(6)
    mismatches = []
    worst = 0.0
    for case in range(10_000):
        start, end = rng.uniform(-20.0, 60.0, size=(2, 2))
        x0, y0 = rng.uniform(0.0, 30.0, size=2)
        w, h = rng.uniform(0.5, 30.0, size=2)
        rect = (x0, y0, x0 + w, y0 + h)
        seg = Segment2D(start, end)
        got = liang_barsky_clip(seg, rect)
        want = oracle_clip(seg, rect)
        if (got is None) != (want is None):
            mismatches.append(case)
            continue
        if got is None:
            continue
        err = max(np.linalg.norm(got.start - want[0]),
                  np.linalg.norm(got.end - want[1]))
        worst = max(worst, err)
    assert not mismatches, f"visibility disagrees on cases {mismatches[:5]}"
    assert worst < 1e-6


# ---------------------------------------------------------------------------
# 7. Closed-form metric values.


def straight_trajectory(n):
    stamps = [float(k) for k in range(n)]
    poses = [Pose(np.eye(3), np.array([float(k), 0.0, 0.0])) for k in range(n)]
    return stamps, poses


def test_rpe_translation_closed_form():
    n = 11
    stamps, poses = straight_trajectory(n)
    gt = trajectory_from_world_to_camera(stamps, poses)
    shifted = [Pose(p.rotation, p.translation + np.array([0.1, 0.0, 0.0]))
               if k >= 5 else p for k, p in enumerate(poses)]
    est = trajectory_from_world_to_camera(stamps, shifted)
    rpe_t, rpe_r = rpe_rmse(est, gt, delta=1)
    # one of the N-1 relative motions absorbs the whole 0.1 m offset
    assert rpe_t == pytest.approx(0.1 / np.sqrt(n - 1), abs=1e-12)
    assert rpe_r == pytest.approx(0.0, abs=1e-12)


def test_ate_closed_form():
    n = 16
    stamps, poses = straight_trajectory(n)
    gt = trajectory_from_world_to_camera(stamps, poses)
    offset = [Pose(p.rotation, p.translation + np.array([0.0, 1.0, 0.0]))
              if k == 7 else p for k, p in enumerate(poses)]
    est = trajectory_from_world_to_camera(stamps, offset)
    assert ate(est, gt, align=False) == pytest.approx(1.0 / np.sqrt(n),
                                                      abs=1e-12)


# ---------------------------------------------------------------------------
# 8. Byte-level determinism of the solve command.


def test_solve_command_is_byte_deterministic(tmp_path):
    args = ["solve", "--frames", "20", "--points", "60", "--noise-sigma",
            "1.0", "--seed", "3", "--feature-mode", "points+lines",
            "--init-mode", "perturbed", "--pose-sigma", "0.05"]
    assert main(args + ["--out-dir", str(tmp_path / "first")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "second")]) == 0
    first = sorted((tmp_path / "first").iterdir())
    second = sorted((tmp_path / "second").iterdir())
    assert [p.name for p in first] == [p.name for p in second] != []
    for a, b in zip(first, second):
        assert a.read_bytes() == b.read_bytes(), a.name

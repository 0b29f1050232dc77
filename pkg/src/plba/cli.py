"""Command-line harness: simulate, solve, check Jacobians, evaluate, export.

The CLI is a thin client of the HTTP service.  By default it talks to an
in-process instance over an ASGI transport (no socket, fully deterministic);
``--server URL`` points it at a running instance instead.  Responses carry
generated artifacts in a ``files`` map, which the CLI writes to ``--out-dir``.

Exit codes: 0 success, 2 usage or invalid arguments, 3 file/input errors,
4 verification failure.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path

import httpx

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_VERIFICATION = 4


class ClientError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _post(server: str | None, path: str, payload: dict) -> dict:
    """POST to a remote server, or to an in-process app when none is given."""
    try:
        if server:
            with httpx.Client(base_url=server, timeout=None) as client:
                response = client.post(path, json=payload)
        else:
            from .service import create_app

            async def call():
                transport = httpx.ASGITransport(app=create_app())
                async with httpx.AsyncClient(transport=transport,
                                             base_url="http://plba",
                                             timeout=None) as client:
                    return await client.post(path, json=payload)

            response = asyncio.run(call())
    except httpx.HTTPError as exc:
        raise ClientError(f"cannot reach server: {exc}", EXIT_IO) from None
    if response.status_code == 422:
        try:
            detail = response.json()["detail"]
        except (KeyError, ValueError):
            detail = response.text
        raise ClientError(f"invalid input: {detail}", EXIT_IO)
    if response.status_code != 200:
        raise ClientError(f"server error {response.status_code}: {response.text}",
                          EXIT_USAGE)
    return response.json()


def _read_file(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ClientError(f"cannot read {path}: {exc}", EXIT_IO) from None


def _write_files(files: dict, out_dir: str):
    directory = Path(out_dir)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for name, content in sorted(files.items()):
            (directory / name).write_text(content)
    except OSError as exc:
        raise ClientError(f"cannot write to {out_dir}: {exc}", EXIT_IO) from None
    return [str(directory / name) for name in sorted(files)]


def _report(result: dict, out_dir: str):
    written = _write_files(result["files"], out_dir)
    for path in written:
        print(f"wrote {path}")
    print(json.dumps(result["summary"], indent=2, sort_keys=True, default=str))


def cmd_simulate(args) -> int:
    result = _post(args.server, "/simulate",
                   {"frames": args.frames, "points": args.points,
                    "noise_sigma": args.noise_sigma, "seed": args.seed})
    _report(result, args.out_dir)
    return EXIT_OK


def cmd_solve(args) -> int:
    payload = {"frames": args.frames, "points": args.points,
               "noise_sigma": args.noise_sigma, "seed": args.seed,
               "feature_mode": args.feature_mode, "init_mode": args.init_mode,
               "pose_sigma": args.pose_sigma, "max_iters": args.max_iters}
    if args.graph is not None:
        payload["graph"] = _read_file(args.graph)
    if args.runs is not None:
        payload["runs"] = args.runs
    result = _post(args.server, "/solve", payload)
    _report(result, args.out_dir)
    return EXIT_OK


def cmd_check_jacobians(args) -> int:
    result = _post(args.server, "/check-jacobians",
                   {"trials": args.trials, "tolerance": args.tolerance,
                    "step": args.step, "seed": args.seed})
    _report(result, args.out_dir)
    if not result["summary"]["passed"]:
        print("jacobian check FAILED", file=sys.stderr)
        return EXIT_VERIFICATION
    return EXIT_OK


def cmd_evaluate(args) -> int:
    result = _post(args.server, "/evaluate",
                   {"est": _read_file(args.est), "gt": _read_file(args.gt),
                    "delta": args.delta, "align": args.align})
    _report(result, args.out_dir)
    return EXIT_OK


def cmd_export(args) -> int:
    result = _post(args.server, "/export",
                   {"graph": _read_file(args.graph), "format": args.format})
    _report(result, args.out_dir)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(), host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plba",
        description="Point-and-line bundle adjustment toolkit")
    parser.add_argument("--server", default=None,
                        help="URL of a running service (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, out_dir=True):
        if out_dir:
            p.add_argument("--out-dir", default=".",
                           help="directory for generated files")

    def add_sim_flags(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--frames", type=int, default=100)
        p.add_argument("--points", type=int, default=200)
        p.add_argument("--noise-sigma", type=float, default=1.0)

    p = sub.add_parser("simulate", help="generate scene, observations, ground truth")
    add_sim_flags(p)
    add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve", help="optimize a simulated or loaded problem")
    add_sim_flags(p)
    p.add_argument("--graph", default=None,
                   help="optimize this graph snapshot instead of simulating")
    p.add_argument("--runs", type=int, default=None,
                   help="Monte-Carlo odometry runs (per-run seeds seed+i)")
    p.add_argument("--feature-mode", default="points+lines",
                   choices=["points", "lines", "points+lines", "all"])
    p.add_argument("--init-mode", default="perturbed",
                   choices=["ground_truth", "perturbed", "odometry"])
    p.add_argument("--pose-sigma", type=float, default=0.05)
    p.add_argument("--max-iters", type=int, default=100)
    add_common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("check-jacobians", help="finite-difference Jacobian audit")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--step", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    add_common(p)
    p.set_defaults(func=cmd_check_jacobians)

    p = sub.add_parser("evaluate", help="RPE/ATE between two TUM trajectories")
    p.add_argument("est", help="estimated trajectory (TUM format)")
    p.add_argument("gt", help="ground-truth trajectory (TUM format)")
    p.add_argument("--delta", type=int, default=1)
    p.add_argument("--align", action="store_true",
                   help="rigidly align before computing ATE")
    add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export", help="export a graph snapshot as PLY/CSV")
    p.add_argument("--graph", required=True, help="graph snapshot file")
    p.add_argument("--format", default="both",
                   choices=["both", "ply", "csv"])
    add_common(p)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ClientError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

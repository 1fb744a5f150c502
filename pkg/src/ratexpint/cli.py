"""Command-line front end.

Subcommands: ``run`` (one simulation, trajectory CSV + run report),
``bench`` (size x engine sweeps as CSV), ``verify`` (built-in oracle
suite), ``poles validate`` and ``graph info``. Exit codes: 0 success,
1 verification failure, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import sys
import time
from pathlib import Path

import numpy as np

from . import verify as verify_mod
from .integrators import Engine, EngineConfig, NumericalBlowup, Trajectory, integrate
from .krylov import KrylovError, ToleranceNotReached
from .poles import PoleFileError, PoleSet, builtin_pole_set, load_poles, repeated_real, validate
from .problems import (Problem, allen_cahn_2d, allen_cahn_graph, builtin_graph,
                       gierer_meinhardt_2d, largest_connected_component,
                       load_edge_list, load_matrix_market_adjacency)
from .solvers import IterativeDivergence, SolverConfig, SolverError
from .tableaus import TableauError, available, tableau

PROBLEMS = ("ac2d", "gm2d", "ac-graph")

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config file + flags.
# ---------------------------------------------------------------------------

def read_config_file(path: Path) -> dict[str, str]:
    """``key = value`` lines, ``#`` comments; flags override file values."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="config file; flags override its values")
    p.add_argument("--problem", choices=PROBLEMS)
    p.add_argument("--nx", type=int, help="grid points per direction (FD problems)")
    p.add_argument("--graph-file", help="edge list or MatrixMarket file, or builtin:<name>")
    p.add_argument("--graph-one-based", action="store_true")
    p.add_argument("--bc", choices=("dirichlet", "neumann", "periodic"))
    p.add_argument("--eps2", type=float, help="interface parameter squared (ac2d)")
    p.add_argument("--eps", type=float, help="interface parameter (ac-graph)")
    p.add_argument("--diffusion", type=float, help="graph diffusion constant D")
    p.add_argument("--integrator", help=f"one of: {', '.join(available())}")
    p.add_argument("--engine", choices=("rational", "polynomial"))
    p.add_argument("--poles", help="pole file path or builtin:<name>")
    p.add_argument("--repeated-pole", type=float, help="single repeated real pole value")
    p.add_argument("--repeated-count", type=int, default=72)
    p.add_argument("--solver", choices=("direct", "iterative"))
    p.add_argument("--solver-tol", type=float)
    p.add_argument("--solver-maxiter", type=int)
    p.add_argument("--preconditioner", choices=("none", "ilu0", "aggregation-amg"))
    p.add_argument("--h", type=float, help="time step size")
    p.add_argument("--T", type=float, help="final time")
    p.add_argument("--tol", type=float, help="expmv tolerance")
    p.add_argument("--m-min", type=int)
    p.add_argument("--m-max", type=int)
    p.add_argument("--check-cadence", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--snapshots", type=int, default=0, help="snapshot stride (0: ends only)")


def _merge_config(args: argparse.Namespace) -> dict:
    cfg: dict = {}
    if args.config:
        cfg.update(read_config_file(args.config))
    for key, value in vars(args).items():
        if key in ("config", "func") or value is None:
            continue
        cfg[key] = value
    return cfg


_DEFAULTS = {"problem": "ac2d", "nx": 64, "bc": None, "eps2": 0.1, "eps": 0.05,
             "diffusion": 5e3, "integrator": "sw2", "engine": "rational",
             "solver": "direct", "solver_tol": 1e-7, "preconditioner": "ilu0",
             "h": 0.5, "T": 1.0, "tol": 1e-8, "seed": 0,
             # Gierer-Meinhardt model parameters (config-file keys)
             "D_a": 0.01, "D_h": 1.0, "p": 1.0, "mu": 1.0, "pprime": 1.0, "nu": 1.0}


def _get(cfg: dict, key: str, cast=None):
    value = cfg.get(key, _DEFAULTS.get(key))
    if value is None or cast is None or value == "":
        return value
    try:
        return cast(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from exc


def build_problem(cfg: dict) -> Problem:
    kind = _get(cfg, "problem")
    if kind == "ac2d":
        bc = _get(cfg, "bc") or "neumann"
        return allen_cahn_2d(_get(cfg, "nx", int), eps2=_get(cfg, "eps2", float), bc=bc)
    if kind == "gm2d":
        bc = _get(cfg, "bc") or "periodic"
        return gierer_meinhardt_2d(_get(cfg, "nx", int), bc=bc, seed=_get(cfg, "seed", int),
                                   D_a=_get(cfg, "D_a", float), D_h=_get(cfg, "D_h", float),
                                   p=_get(cfg, "p", float), mu=_get(cfg, "mu", float),
                                   pprime=_get(cfg, "pprime", float), nu=_get(cfg, "nu", float))
    if kind == "ac-graph":
        spec = cfg.get("graph_file", "builtin:road2600")
        if str(spec).startswith("builtin:"):
            g = builtin_graph(str(spec).split(":", 1)[1])
        else:
            path = Path(spec)
            if not path.exists():
                raise ConfigError(f"graph file not found: {path}")
            if path.suffix in (".mtx", ".mm"):
                g = load_matrix_market_adjacency(path)
            else:
                g = load_edge_list(path, one_based=bool(cfg.get("graph_one_based")))
        g = largest_connected_component(g)
        return allen_cahn_graph(g, eps=_get(cfg, "eps", float),
                                diffusion=_get(cfg, "diffusion", float),
                                seed=_get(cfg, "seed", int))
    raise ConfigError(f"unknown problem {kind!r}; expected one of {PROBLEMS}")


def build_pole_set(cfg: dict) -> PoleSet | None:
    if cfg.get("repeated_pole") is not None:
        return repeated_real(_get(cfg, "repeated_pole", float),
                             _get(cfg, "repeated_count", int) or 72)
    spec = cfg.get("poles")
    if spec is None:
        spec = "builtin:cf16_shifted" if _get(cfg, "solver") == "iterative" else "builtin:cf12"
    spec = str(spec)
    if spec.startswith("builtin:"):
        return builtin_pole_set(spec.split(":", 1)[1])
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"pole file not found: {path}")
    return load_poles(path)


def build_engine_config(cfg: dict) -> EngineConfig:
    engine = _get(cfg, "engine")
    if engine not in ("rational", "polynomial"):
        raise ConfigError(f"unknown engine {engine!r}")
    solver_kwargs = {}
    if cfg.get("solver_maxiter") is not None:
        solver_kwargs["max_iterations"] = int(cfg["solver_maxiter"])
    solver_cfg = SolverConfig(mode=_get(cfg, "solver"),
                              tolerance=_get(cfg, "solver_tol", float),
                              preconditioner=_get(cfg, "preconditioner"),
                              **solver_kwargs)
    poles = build_pole_set(cfg) if engine == "rational" else None
    kwargs = {}
    for key in ("m_min", "m_max", "check_cadence"):
        if cfg.get(key) is not None:
            kwargs[key] = int(cfg[key])
    return EngineConfig(engine=engine, tol=_get(cfg, "tol", float), poles=poles,
                        solver=solver_cfg, **kwargs)


def _integrator(cfg: dict):
    name = _get(cfg, "integrator")
    try:
        return tableau(name)
    except TableauError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Outputs.
# ---------------------------------------------------------------------------

def state_checksum(u: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(u).tobytes()).hexdigest()[:16]


def write_trajectory_csv(path: Path, traj: Trajectory, max_columns: int = 10000):
    """Snapshot rows: ``t`` then the full state; above ``max_columns``
    entries the state is stride-sampled and 2-norm/min/max columns are
    prepended so the full-resolution signal is not silently lost."""
    n = traj.snapshots[0].shape[0]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        if n <= max_columns:
            writer.writerow(["t"] + [f"u{i}" for i in range(n)])
            for t, u in zip(traj.snapshot_times, traj.snapshots):
                writer.writerow([f"{t!r}"] + [f"{float(v)!r}" for v in u])
        else:
            stride = int(np.ceil(n / max_columns))
            idx = np.arange(0, n, stride)
            writer.writerow(["t", "norm2", "min", "max"] + [f"u{i}" for i in idx])
            for t, u in zip(traj.snapshot_times, traj.snapshots):
                writer.writerow([f"{t!r}", f"{float(np.linalg.norm(u))!r}",
                                 f"{float(u.min())!r}", f"{float(u.max())!r}"]
                                + [f"{float(v)!r}" for v in u[idx]])


def write_run_report(path: Path, cfg: dict, traj: Trajectory, checksum: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# run report\n")
        for key in sorted(cfg):
            fh.write(f"{key} = {cfg[key]}\n")
        fh.write(f"steps = {len(traj.steps)}\n")
        fh.write(f"expmv_calls = {traj.total_expmv_calls()}\n")
        fh.write(f"arnoldi_steps = {traj.total_arnoldi_steps()}\n")
        fh.write(f"avg_krylov_iterations = {traj.average_krylov_iterations():.4f}\n")
        fh.write(f"solver_iterations = {traj.total_solver_iterations()}\n")
        fh.write(f"max_solver_residual = {traj.max_residual():.6e}\n")
        fh.write(f"wall_time_s = {traj.wall_time:.4f}\n")
        fh.write(f"final_checksum = {checksum}\n")


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    try:
        cfg = _merge_config(args)
        problem = build_problem(cfg)
        tab = _integrator(cfg)
        engine_cfg = build_engine_config(cfg)
        h = _get(cfg, "h", float)
        T = _get(cfg, "T", float)
        if h is None or T is None or h <= 0 or T <= 0:
            raise ConfigError("h and T must be positive")
        out_dir = Path(cfg.get("out", "."))
        out_dir.mkdir(parents=True, exist_ok=True)
    except (ConfigError, PoleFileError, FileNotFoundError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        engine = Engine(problem, engine_cfg)
        traj = integrate(problem, tab, h, T, engine,
                         snapshot_stride=int(cfg.get("snapshots") or 0))
    except (NumericalBlowup, ToleranceNotReached, KrylovError,
            IterativeDivergence, SolverError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    checksum = state_checksum(traj.final_state)
    traj_path = out_dir / f"{problem.name}-{tab.name}-trajectory.csv"
    report_path = out_dir / f"{problem.name}-{tab.name}-report.txt"
    write_trajectory_csv(traj_path, traj)
    write_run_report(report_path, cfg, traj, checksum)
    print(f"wrote {traj_path}")
    print(f"wrote {report_path}")
    print(f"final_checksum = {checksum}")
    return EXIT_OK


BENCH_HEADER = ["problem", "nx", "n", "engine", "integrator", "h",
                "avg_krylov_iterations", "total_expmv_calls", "wall_time_s",
                "solver_iterations", "max_solver_residual", "final_checksum", "error"]


def cmd_bench(args) -> int:
    try:
        cfg = _merge_config(args)
        sizes = [int(s) for s in str(cfg.get("sizes", "64,128")).split(",") if s]
        engines = [e.strip() for e in str(cfg.get("engines", "rational,polynomial")).split(",") if e]
        for e in engines:
            if e not in ("rational", "polynomial"):
                raise ConfigError(f"unknown engine {e!r}")
        tab = _integrator(cfg)
        out_path = Path(cfg.get("out", ".")) / "bench.csv"
        out_path.parent.mkdir(parents=True, exist_ok=True)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    rows = []
    for nx in sizes:
        cell_cfg = dict(cfg)
        cell_cfg["nx"] = nx
        try:
            problem = build_problem(cell_cfg)
        except (ConfigError, ValueError) as exc:
            for engine_name in engines:
                rows.append([cfg.get("problem", "ac2d"), nx, "", engine_name,
                             tab.name, cfg.get("h", 0.5), "", "", "", "", "", "", str(exc)])
            continue
        for engine_name in engines:
            cell = dict(cell_cfg)
            cell["engine"] = engine_name
            try:
                engine_cfg = build_engine_config(cell)
                engine = Engine(problem, engine_cfg)
                h = _get(cell, "h", float)
                T = _get(cell, "T", float)
                t0 = time.perf_counter()
                traj = integrate(problem, tab, h, T, engine)
                wall = time.perf_counter() - t0
                rows.append([
                    cell.get("problem", "ac2d"), nx, problem.n, engine_name, tab.name, h,
                    f"{traj.average_krylov_iterations():.4f}", traj.total_expmv_calls(),
                    f"{wall:.4f}", traj.total_solver_iterations(),
                    f"{traj.max_residual():.3e}", state_checksum(traj.final_state), ""])
            except Exception as exc:  # per-cell failures recorded, sweep continues
                rows.append([cell.get("problem", "ac2d"), nx, problem.n, engine_name,
                             tab.name, cell.get("h", ""), "", "", "", "", "", "", str(exc)])
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BENCH_HEADER)
        writer.writerows(rows)
    print(f"wrote {out_path} ({len(rows)} rows)")
    return EXIT_OK


def cmd_verify(args) -> int:
    t0 = time.perf_counter()
    results = verify_mod.run_all(verbose_print=print)
    failed = [r for r in results if not r.passed]
    print(f"\n{len(results) - len(failed)}/{len(results)} checks passed "
          f"in {time.perf_counter() - t0:.1f}s")
    return EXIT_OK if not failed else EXIT_VERIFY_FAILED


def cmd_poles_validate(args) -> int:
    try:
        spec = str(args.poles)
        ps = builtin_pole_set(spec.split(":", 1)[1]) if spec.startswith("builtin:") \
            else load_poles(Path(spec))
    except (PoleFileError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"poles: {len(ps)} ({ps.kind}, convention {ps.convention}, "
          f"conjugate_closed={ps.conjugate_closed})")
    for i, xi in enumerate(ps):
        print(f"  {i:3d}: {xi.real:+.6e} {xi.imag:+.6e}i")
    warnings = validate(ps, lam_max=args.lam_max, scale=args.scale)
    for w in warnings:
        print("warning:", w)
    print(f"{len(warnings)} warnings against spectrum bound {args.lam_max:g} "
          f"(scale {args.scale:g})")
    return EXIT_OK


def cmd_graph_info(args) -> int:
    path = Path(args.graph_file)
    try:
        if str(args.graph_file).startswith("builtin:"):
            g = builtin_graph(str(args.graph_file).split(":", 1)[1])
        elif path.suffix in (".mtx", ".mm"):
            g = load_matrix_market_adjacency(path)
        else:
            g = load_edge_list(path, one_based=args.graph_one_based)
    except (FileNotFoundError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    lcc = largest_connected_component(g)
    degrees = np.asarray(g.adjacency().sum(axis=1)).ravel()
    print(f"nodes = {g.n}")
    print(f"edges = {g.num_edges}")
    print(f"largest_component = {lcc.n}")
    print(f"max_weighted_degree = {degrees.max():.6g}")
    print(f"mean_weighted_degree = {degrees.mean():.6g}")
    print(f"coordinates = {'yes' if g.coords is not None else 'no'}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ratexpint",
        description="Exponential Runge-Kutta integration of stiff semi-linear ODEs "
                    "with adaptive rational Krylov exponential actions.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one simulation")
    _add_run_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_bench = sub.add_parser("bench", help="benchmark sweep over sizes x engines")
    _add_run_flags(p_bench)
    p_bench.add_argument("--sizes", help="comma-separated nx list", default=None)
    p_bench.add_argument("--engines", help="comma-separated engine list", default=None)
    p_bench.set_defaults(func=cmd_bench)

    p_verify = sub.add_parser("verify", help="run the built-in oracle suite")
    p_verify.set_defaults(func=cmd_verify)

    p_poles = sub.add_parser("poles", help="pole set utilities")
    poles_sub = p_poles.add_subparsers(dest="poles_command", required=True)
    p_pv = poles_sub.add_parser("validate", help="load a pole file and check it "
                                                 "against a spectrum bound")
    p_pv.add_argument("poles", help="pole file path or builtin:<name>")
    p_pv.add_argument("--lam-max", type=float, default=1e6)
    p_pv.add_argument("--scale", type=float, default=1.0)
    p_pv.set_defaults(func=cmd_poles_validate)

    p_graph = sub.add_parser("graph", help="graph utilities")
    graph_sub = p_graph.add_subparsers(dest="graph_command", required=True)
    p_gi = graph_sub.add_parser("info", help="summarize a graph file")
    p_gi.add_argument("graph_file")
    p_gi.add_argument("--graph-one-based", action="store_true")
    p_gi.set_defaults(func=cmd_graph_info)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

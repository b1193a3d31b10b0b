"""Command-line interface: ``gasopt {simulate,steady,check-grad,optimize,bench}``.

Settings come from built-in defaults, then an optional JSON ``--config``
file, then command-line flags.  Failures print a one-line JSON error object
on stderr and exit nonzero:

* 1  the requested operation failed (simulation, optimisation, gradient check)
* 2  invalid configuration or arguments
* 3  input file missing or unreadable

Log verbosity is read from ``GASOPT_LOG_LEVEL`` (default ``WARNING``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .adjoint import CostFunctional, fd_verify
from .bench import SHIPPED, BenchCase, run_bench, shipped_case, shipped_network_path
from .errors import ConfigError, GasOptError, InvalidValue, IterationLimit
from .export import write_compressor_csv, write_trajectory_csv
from .lumping import LumpingConfig, LumpingScheme, assemble_constraints
from .mesh import MeshOptions, build_mesh
from .network import load_network
from .ogf import OGFProblem, OptimizerOptions, solve_ogf
from .simulator import SolverOptions, mass_balance_errors, objective_cost, simulate

log = logging.getLogger("gasopt")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


@dataclass
class RunConfig:
    network: Optional[str] = None
    out: str = "out"
    scheme: str = "fl"
    n_h: int = 10
    dt: float = 600.0
    horizon: float = 86400.0
    tol: float = 1e-10
    alpha: float = 0.002
    kappa: Optional[list] = None
    # optional overrides of the network file
    p_min: Optional[float] = None
    p_max: Optional[float] = None
    K: Optional[float] = None
    gamma: Optional[float] = None
    kappa_min: Optional[float] = None
    kappa_max: Optional[float] = None
    supply_scaling: Optional[float] = None
    demand_scaling: Optional[float] = None
    profile_convention: Optional[str] = None
    # gradient check
    threshold: float = 1e-4
    fd_step: float = 1e-6
    # optimiser
    feas_tol: float = 1e-6
    stat_tol: float = 1e-4
    max_outer: int = 100
    # bench
    schemes: Optional[list] = None
    convergence: bool = False
    n_h_list: list = field(default_factory=lambda: [2, 4, 6, 8, 10])
    ref_n_h: int = 20
    ref_dt: float = 60.0

    @classmethod
    def keys(cls):
        return {f.name for f in fields(cls)}


def _load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: {exc.msg} (line {exc.lineno}, column {exc.colno})") from None
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    extra = set(doc) - RunConfig.keys()
    if extra:
        raise ConfigError(f"unknown config keys {sorted(extra)}")
    return doc


def build_config(args) -> RunConfig:
    values = {}
    if args.config:
        values.update(_load_config(args.config))
    flags = {
        "network": args.network, "out": args.out, "scheme": args.scheme, "n_h": args.nh, "dt": args.dt,
        "horizon": args.horizon, "alpha": args.alpha,
    }
    for k in ("kappa", "threshold", "fd_step", "convergence", "solution"):
        if hasattr(args, k):
            flags[k] = getattr(args, k)
    solution = flags.pop("solution", None)
    if flags.get("convergence") is False:
        flags.pop("convergence")
    values.update({k: v for k, v in flags.items() if v is not None})
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if solution:
        cfg.kappa = _kappa_from_solution(solution)
    if cfg.network is None:
        raise ConfigError("no network given (use --network or the config key 'network')")
    try:
        for s in [cfg.scheme, *(cfg.schemes or ())]:
            LumpingScheme.parse(s)
    except InvalidValue as exc:
        raise ConfigError(str(exc)) from None
    if cfg.n_h < 1 or int(cfg.n_h) != cfg.n_h:
        raise ConfigError("n_h must be a positive integer")
    return cfg


def _kappa_from_solution(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    k = doc.get("kappa")
    if not isinstance(k, dict):
        raise ConfigError(f"{path}: no 'kappa' object")
    return list(k.values())


def _network_path(name):
    if name in SHIPPED and not Path(name).exists():
        return shipped_network_path(name)
    return Path(name)


def _network(cfg: RunConfig):
    net = load_network(_network_path(cfg.network))
    comp_kw = {k: getattr(cfg, k) for k in ("K", "gamma", "kappa_min", "kappa_max") if getattr(cfg, k) is not None}
    if comp_kw:
        net = net.with_compressor_params(**comp_kw)
    if cfg.p_min is not None or cfg.p_max is not None:
        net = net.with_pressure_bounds(cfg.p_min, cfg.p_max)
    if cfg.supply_scaling is not None or cfg.demand_scaling is not None:
        net = net.with_scaling(cfg.supply_scaling, cfg.demand_scaling)
    if cfg.profile_convention is not None:
        from dataclasses import replace

        net = replace(net, constants=replace(net.constants, profile_convention=cfg.profile_convention))
    return net


def _solver(cfg: RunConfig, **kw) -> SolverOptions:
    base = dict(dt=cfg.dt, horizon=cfg.horizon, tol=cfg.tol)
    base.update(kw)
    return SolverOptions(**base)


def _kappa(cfg: RunConfig, net, default="lower"):
    if cfg.kappa is not None:
        k = np.asarray(cfg.kappa, dtype=float).reshape(-1)
        if k.size != len(net.compressors):
            raise ConfigError(f"kappa needs {len(net.compressors)} values, got {k.size}")
        return k
    if default == "mid":
        return np.array([0.5 * (c.kappa_min + c.kappa_max) for c in net.compressors])
    return np.array([c.kappa_min for c in net.compressors])


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(obj):
    print(json.dumps(obj, default=float))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig) -> int:
    net = _network(cfg)
    mesh = build_mesh(net, MeshOptions(cfg.n_h))
    kappa = _kappa(cfg, net)
    traj = simulate(net, mesh, kappa, _solver(cfg), retain_factors=False)
    out = _outdir(cfg)
    write_trajectory_csv(traj, out / "trajectory.csv")
    write_compressor_csv(traj, out / "compressors.csv")
    errs = mass_balance_errors(traj)
    with open(out / "mass_balance.csv", "w", encoding="utf-8") as fh:
        fh.write("step,rel_error\n")
        for n, e in enumerate(errs, start=1):
            fh.write(f"{n},{float(e)!r}\n")
    P = traj.node_pressures()[1:] if traj.n_steps else traj.node_pressures()
    _emit({"command": "simulate", "steps": traj.n_steps, "J": objective_cost(traj),
           "max_mass_balance_error": float(errs.max()) if len(errs) else 0.0,
           "min_pressure": float(P.min()), "max_pressure": float(P.max())})
    return EXIT_OK


def cmd_steady(cfg: RunConfig) -> int:
    net = _network(cfg)
    mesh = build_mesh(net, MeshOptions(cfg.n_h))
    traj = simulate(net, mesh, _kappa(cfg, net), _solver(cfg, horizon=0.0), retain_factors=False)
    out = _outdir(cfg)
    write_trajectory_csv(traj, out / "steady.csv")
    write_compressor_csv(traj, out / "steady_compressors.csv")
    P = traj.node_pressures()[0]
    _emit({"command": "steady", "residual": float(traj.residual_norms[0]),
           "pressures": dict(zip(net.node_ids, P.tolist()))})
    return EXIT_OK


def cmd_check_grad(cfg: RunConfig) -> int:
    net = _network(cfg)
    mesh = build_mesh(net, MeshOptions(cfg.n_h))
    opts = _solver(cfg)
    if not net.compressors:
        log.warning("network has no compressors; gradient check is vacuous")
        _emit({"command": "check-grad", "passed": True, "max_rel_error": 0.0, "vacuous": True})
        return EXIT_OK
    kappa = _kappa(cfg, net, default="mid")
    funcs = [CostFunctional()] + assemble_constraints(mesh, opts.n_steps, cfg.scheme, LumpingConfig(cfg.alpha))
    report = fd_verify(net, mesh, kappa, funcs, h=cfg.fd_step, options=opts)
    out = _outdir(cfg)
    report.write_csv(out / "gradient_report.csv", [c.id for c in net.compressors])
    passed = report.worst < cfg.threshold
    _emit({"command": "check-grad", "passed": passed, "max_rel_error": report.worst,
           "threshold": cfg.threshold, "functionals": len(funcs)})
    return EXIT_OK if passed else EXIT_FAIL


def cmd_optimize(cfg: RunConfig) -> int:
    net = _network(cfg)
    mesh = build_mesh(net, MeshOptions(cfg.n_h))
    opt = OptimizerOptions(stat_tol=cfg.stat_tol, feas_tol=cfg.feas_tol, max_outer=cfg.max_outer,
                           initial_guess=tuple(cfg.kappa) if cfg.kappa is not None else None)
    problem = OGFProblem(net, mesh, cfg.scheme, LumpingConfig(cfg.alpha), _solver(cfg), opt)
    ids = [c.id for c in net.compressors]
    settings = {"network": str(cfg.network), "scheme": LumpingScheme.parse(cfg.scheme).value,
                "n_h": cfg.n_h, "dt": cfg.dt, "horizon": cfg.horizon, "alpha": cfg.alpha}
    try:
        sol = solve_ogf(problem)
    except IterationLimit as exc:
        out = _outdir(cfg)
        if exc.solution is not None:
            d = exc.solution.to_dict(ids)
            d["settings"] = settings
            with open(out / "best_feasible.json", "w", encoding="utf-8") as fh:
                json.dump(d, fh, indent=2)
        raise
    out = _outdir(cfg)
    doc = sol.to_dict(ids)
    doc["settings"] = settings
    with open(out / "solution.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
    sol.write_log(out / "iterations.csv")
    _emit({"command": "optimize", "J": sol.J, "kappa": doc["kappa"], "min_pressure": sol.min_pressure,
           "max_pressure": sol.max_pressure, "iterations": sol.iterations, "status": sol.status})
    return EXIT_OK


def cmd_bench(cfg: RunConfig, explicit: set) -> int:
    schemes = cfg.schemes
    if schemes is None:
        schemes = [cfg.scheme] if "scheme" in explicit else ["NL", "TL", "SL", "FL"]
    over = dict(schemes=tuple(schemes), alpha=cfg.alpha, feas_tol=cfg.feas_tol, stat_tol=cfg.stat_tol,
                max_outer=cfg.max_outer)
    for k, attr in (("n_h", "n_h"), ("dt", "dt"), ("horizon", "horizon")):
        if k in explicit:
            over[attr] = getattr(cfg, attr)
    for k in ("p_min", "p_max", "supply_scaling", "demand_scaling"):
        if getattr(cfg, k) is not None:
            over[k] = getattr(cfg, k)
    if cfg.kappa is not None:
        over["kappa"] = tuple(cfg.kappa)
    if cfg.network in SHIPPED and not Path(cfg.network).exists():
        case = shipped_case(cfg.network, **over)
    else:
        over.setdefault("n_h", cfg.n_h)
        over.setdefault("dt", cfg.dt)
        over.setdefault("horizon", cfg.horizon)
        case = BenchCase(network=cfg.network, **over)
    case.load()  # fail before any output exists
    report = run_bench(case, cfg.convergence, cfg.n_h_list, cfg.ref_n_h, cfg.ref_dt)
    files = report.write(_outdir(cfg))
    _emit({"command": "bench", "case": case.name,
           "rows": [{"scheme": r.scheme, "status": r.status, "J": r.J, "iterations": r.iterations,
                     "min_pressure": r.min_pressure} for r in report.schemes],
           "files": [str(f) for f in files]})
    failed = [r for r in report.schemes if r.error]
    return EXIT_FAIL if failed else EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _kappa_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--network", help="network JSON file, or a shipped name: " + ", ".join(SHIPPED))
    common.add_argument("--config", help="JSON file with run settings")
    common.add_argument("--scheme", type=str.lower, choices=["nl", "tl", "sl", "fl"])
    common.add_argument("--nh", type=int, help="control volumes per pipe")
    common.add_argument("--dt", type=float, help="time step, s")
    common.add_argument("--horizon", type=float, help="horizon T, s")
    common.add_argument("--alpha", type=float, help="log-sum-exp smoothing parameter")
    common.add_argument("--out", help="output directory")
    common.add_argument("--kappa", type=_kappa_list, help="compressor ratios, comma separated")

    p = argparse.ArgumentParser(prog="gasopt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="simulate a trajectory and write CSVs")
    s.add_argument("--solution", help="take the ratios from an optimize solution.json")
    sub.add_parser("steady", parents=[common], help="steady state at t = 0")
    g = sub.add_parser("check-grad", parents=[common], help="adjoint vs finite-difference gradients")
    g.add_argument("--threshold", type=float, help="max relative error to pass (default 1e-4)")
    g.add_argument("--fd-step", dest="fd_step", type=float, help="central-difference step (default 1e-6)")
    sub.add_parser("optimize", parents=[common], help="solve the optimal gas flow problem")
    b = sub.add_parser("bench", parents=[common], help="scheme matrix and discretisation study")
    b.add_argument("--convergence", action="store_true", help="also run the discretisation study")
    return p


_FLAG_TO_KEY = {"nh": "n_h"}


def main(argv=None) -> int:
    level = os.environ.get("GASOPT_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    explicit = {_FLAG_TO_KEY.get(k, k) for k, v in vars(args).items() if v not in (None, False)}
    try:
        cfg = build_config(args)
        if args.config:
            explicit |= set(_load_config(args.config))
        cmd = args.command
        if cmd == "simulate":
            return cmd_simulate(cfg)
        if cmd == "steady":
            return cmd_steady(cfg)
        if cmd == "check-grad":
            return cmd_check_grad(cfg)
        if cmd == "optimize":
            return cmd_optimize(cfg)
        return cmd_bench(cfg, explicit)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        _error({"error": "io", "message": str(exc)})
        return EXIT_IO
    except (ConfigError, InvalidValue) as exc:
        d = exc.to_dict()
        d["error"] = "config" if isinstance(exc, ConfigError) else d["error"]
        _error(d)
        return EXIT_CONFIG
    except GasOptError as exc:
        _error(exc.to_dict())
        return EXIT_FAIL


def _error(obj):
    print(json.dumps(obj, default=str), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())

"""Benchmark protocol: discretisation study, scheme matrix and error fields.

Report files written by :meth:`BenchReport.write`:

* ``schemes.csv``     one row per lumping scheme (iterations, wall time, J*, pressures)
* ``convergence.csv`` ``n_h, dt_s, J, min_pressure, rel_objective_error, rel_min_pressure_error``
* ``edge_errors.csv`` ``scheme_a, scheme_b, edge_id, kind, max_abs_pct_error``
* ``node_errors.csv`` ``scheme_a, scheme_b, node_id, max_abs_pct_error``
* ``summary.json``    everything above plus the case description
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, GasOptError, MeshMismatch
from .lumping import LumpingConfig, LumpingScheme, constraint_count
from .mesh import MeshOptions, build_mesh
from .network import GasNetwork, load_network
from .ogf import OGFProblem, OptimizerOptions, solve_ogf
from .simulator import SolverOptions, Trajectory, objective_cost, simulate

log = logging.getLogger(__name__)

SHIPPED = ("line3", "tree10", "loop20", "net60")
ALL_SCHEMES = ("NL", "TL", "SL", "FL")


def shipped_network_path(name: str) -> Path:
    if name not in SHIPPED:
        raise ConfigError(f"unknown shipped network {name!r}; choose from {SHIPPED}")
    return Path(str(resources.files("gasopt") / "data" / f"{name}.json"))


@dataclass
class BenchCase:
    network: str  # file path or the name of a shipped network
    name: Optional[str] = None
    supply_scaling: Optional[float] = None  # None keeps the file's value
    demand_scaling: Optional[float] = None
    n_h: int = 10
    dt: float = 600.0
    horizon: float = 86400.0
    alpha: float = 0.002
    p_min: Optional[float] = None
    p_max: Optional[float] = None
    schemes: tuple = ALL_SCHEMES
    feas_tol: float = 1e-6
    stat_tol: float = 1e-4
    max_outer: int = 100
    kappa: Optional[tuple] = None  # fixed ratios for the discretisation study

    def __post_init__(self):
        self.schemes = tuple(LumpingScheme.parse(s).value for s in self.schemes)
        if self.name is None:
            self.name = Path(self.network).stem if self.network not in SHIPPED else self.network

    @classmethod
    def from_dict(cls, d: dict) -> "BenchCase":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown bench case keys {sorted(extra)}")
        try:
            return cls(**d)
        except GasOptError as exc:
            raise ConfigError(str(exc)) from exc

    def load(self) -> GasNetwork:
        path = shipped_network_path(self.network) if self.network in SHIPPED else Path(self.network)
        net = load_network(path)
        if self.supply_scaling is not None or self.demand_scaling is not None:
            net = net.with_scaling(self.supply_scaling, self.demand_scaling)
        if self.p_min is not None or self.p_max is not None:
            net = net.with_pressure_bounds(self.p_min, self.p_max)
        return net

    def solver_options(self, **kw) -> SolverOptions:
        base = dict(dt=self.dt, horizon=self.horizon)
        base.update(kw)
        return SolverOptions(**base)

    def optimizer_options(self) -> OptimizerOptions:
        return OptimizerOptions(stat_tol=self.stat_tol, feas_tol=self.feas_tol, max_outer=self.max_outer)


def shipped_case(name: str, **overrides) -> BenchCase:
    """Default benchmark settings for a shipped network.

    The larger cases use coarser meshes and time steps so that the unlumped
    scheme (whose gradient cost grows with nodes times steps squared) stays
    within a few minutes.
    """
    defaults = {
        "line3": dict(n_h=10, dt=3600.0),
        "tree10": dict(n_h=10, dt=3600.0),
        "loop20": dict(n_h=6, dt=3600.0),
        "net60": dict(n_h=2, dt=7200.0),
    }
    if name not in defaults:
        raise ConfigError(f"unknown shipped network {name!r}; choose from {SHIPPED}")
    kw = dict(defaults[name], network=name)
    kw.update(overrides)
    return BenchCase(**kw)


# ---------------------------------------------------------------------------
# discretisation study
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceRow:
    n_h: int
    dt: float
    J: float
    min_pressure: float
    rel_objective_error: float
    rel_min_pressure_error: float


def run_convergence_study(case: BenchCase, n_h_list, ref_n_h: int = 20, ref_dt: float = 60.0,
                          dt: Optional[float] = None) -> list:
    """Relative errors of J and of the network minimum pressure against a fine run.

    Ratios are held fixed at ``case.kappa`` (default: midpoint of each
    compressor's range).  Each run uses time step ``dt`` (default ``ref_dt``,
    so only the spatial resolution varies).
    """
    net = case.load()
    kappa = case.kappa
    if kappa is None:
        kappa = tuple(0.5 * (c.kappa_min + c.kappa_max) for c in net.compressors)
    kappa = np.asarray(kappa, float)
    dt = ref_dt if dt is None else dt

    def run(n_h, step):
        mesh = build_mesh(net, MeshOptions(n_h))
        traj = simulate(net, mesh, kappa, case.solver_options(dt=step), retain_factors=False)
        return objective_cost(traj), float(traj.node_pressures()[1:].min())

    J_ref, p_ref = run(ref_n_h, ref_dt)
    rows = []
    for n_h in n_h_list:
        if n_h == ref_n_h and dt == ref_dt:
            J, p = J_ref, p_ref
        else:
            J, p = run(n_h, dt)
        eJ = abs(J - J_ref) / abs(J_ref) if J_ref != 0 else abs(J)
        rows.append(ConvergenceRow(int(n_h), float(dt), J, p, eJ, abs(p - p_ref) / abs(p_ref)))
    return rows


# ---------------------------------------------------------------------------
# scheme matrix
# ---------------------------------------------------------------------------


@dataclass
class SchemeRow:
    scheme: str
    status: str
    iterations: int = 0
    wall_time_s: float = float("nan")
    J: float = float("nan")
    min_pressure: float = float("nan")
    max_pressure: float = float("nan")
    max_violation: float = float("nan")
    simulations: int = 0
    adjoint_solves: int = 0
    n_constraints: int = 0
    kappa: tuple = ()
    error: Optional[str] = None


@dataclass
class BenchReport:
    case: BenchCase
    schemes: list = field(default_factory=list)
    convergence: list = field(default_factory=list)
    edge_errors: list = field(default_factory=list)  # (a, b, edge_id, kind, value)
    node_errors: list = field(default_factory=list)  # (a, b, node_id, value)
    trajectories: dict = field(default_factory=dict, repr=False)

    def row(self, scheme) -> SchemeRow:
        scheme = LumpingScheme.parse(scheme).value
        return next(r for r in self.schemes if r.scheme == scheme)

    def to_dict(self, timings: bool = True) -> dict:
        rows = []
        for r in self.schemes:
            d = asdict(r)
            d["kappa"] = list(r.kappa)
            if not timings:
                d.pop("wall_time_s")
            rows.append(d)
        case = asdict(self.case)
        case["schemes"] = list(self.case.schemes)
        return {
            "case": case,
            "schemes": rows,
            "convergence": [asdict(r) for r in self.convergence],
            "edge_errors": [list(e) for e in self.edge_errors],
            "node_errors": [list(e) for e in self.node_errors],
        }

    def write(self, outdir):
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        if self.schemes:
            cols = ["scheme", "status", "iterations", "wall_time_s", "J", "min_pressure", "max_pressure",
                    "max_violation", "simulations", "adjoint_solves", "n_constraints", "kappa", "error"]
            with open(out / "schemes.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(cols)
                for r in self.schemes:
                    w.writerow([r.scheme, r.status, r.iterations, f"{r.wall_time_s:.6f}", repr(float(r.J)),
                                repr(float(r.min_pressure)), repr(float(r.max_pressure)),
                                repr(float(r.max_violation)),
                                r.simulations, r.adjoint_solves, r.n_constraints,
                                " ".join(repr(float(k)) for k in r.kappa), r.error or ""])
            written.append(out / "schemes.csv")
        if self.convergence:
            with open(out / "convergence.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["n_h", "dt_s", "J", "min_pressure", "rel_objective_error", "rel_min_pressure_error"])
                for r in self.convergence:
                    w.writerow([r.n_h, repr(float(r.dt)), repr(float(r.J)), repr(float(r.min_pressure)),
                                repr(float(r.rel_objective_error)), repr(float(r.rel_min_pressure_error))])
            written.append(out / "convergence.csv")
        if self.edge_errors or self.node_errors:
            with open(out / "edge_errors.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["scheme_a", "scheme_b", "edge_id", "kind", "max_abs_pct_error"])
                for a, b, eid, kind, v in self.edge_errors:
                    w.writerow([a, b, eid, kind, repr(float(v))])
            with open(out / "node_errors.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["scheme_a", "scheme_b", "node_id", "max_abs_pct_error"])
                for a, b, nid, v in self.node_errors:
                    w.writerow([a, b, nid, repr(float(v))])
            written += [out / "edge_errors.csv", out / "node_errors.csv"]
        with open(out / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, default=float)
        written.append(out / "summary.json")
        return written


def run_scheme_matrix(case: BenchCase, report: Optional[BenchReport] = None) -> BenchReport:
    """Full OGF solve for every scheme of ``case``; failures are recorded per row."""
    report = report or BenchReport(case)
    net = case.load()
    mesh = build_mesh(net, MeshOptions(case.n_h))
    lump = LumpingConfig(alpha=case.alpha)
    for scheme in case.schemes:
        problem = OGFProblem(net, mesh, scheme, lump, case.solver_options(), case.optimizer_options())
        t0 = time.perf_counter()
        try:
            sol = solve_ogf(problem)
        except GasOptError as exc:
            log.warning("scheme %s failed: %s", scheme, exc)
            report.schemes.append(SchemeRow(scheme, getattr(exc, "code", "error"),
                                            wall_time_s=time.perf_counter() - t0, error=str(exc)))
            continue
        wall = time.perf_counter() - t0
        report.schemes.append(SchemeRow(
            scheme, sol.status, sol.iterations, wall, sol.J, sol.min_pressure, sol.max_pressure,
            sol.max_violation, sol.simulations, sol.adjoint_solves,
            constraint_count(scheme, len(net.nodes), problem.solver.n_steps),
            tuple(float(k) for k in sol.kappa),
        ))
        report.trajectories[scheme] = sol.trajectory
        log.info("scheme %s: J*=%.6g in %d iterations (%.2fs)", scheme, sol.J, sol.iterations, wall)
    return report


# ---------------------------------------------------------------------------
# error fields
# ---------------------------------------------------------------------------


def _edge_flows(traj: Trajectory) -> np.ndarray:
    """(N+1, pipes + compressors) mass flux; pipes use the mean over their grid nodes."""
    m = traj.mesh
    X = traj.states
    cols = []
    for e in range(len(m.network.pipes)):
        g = np.arange(m.pipe_first_grid[e], m.pipe_last_grid[e] + 1)
        cols.append(X[:, m.grid_mcol[g]].mean(axis=1))
    for c in range(m.n_comp):
        cols.append(X[:, m.comp_mout[c]])
    return np.column_stack(cols) if cols else np.zeros((len(X), 0))


def _pct_field(A, B):
    """Per column: the signed 100 (a - b)/ref with the largest magnitude over time.

    ``ref`` is the larger of the two series' peak magnitudes, so the field is
    antisymmetric in its arguments.
    """
    diff = A - B
    ref = np.maximum(np.abs(A).max(axis=0), np.abs(B).max(axis=0))
    ref = np.where(ref > 0, ref, 1.0)
    pick = np.abs(diff).argmax(axis=0)
    return 100.0 * diff[pick, np.arange(A.shape[1])] / ref


def diff_solutions(traj_a: Trajectory, traj_b: Trajectory):
    """Per-edge mass-flux and per-node pressure percent error fields.

    Returns ``(edge_field, node_field)``: edge entries follow pipes (file
    order) then compressors, node entries the original nodes.
    """
    if traj_a.mesh.signature() != traj_b.mesh.signature() or traj_a.states.shape != traj_b.states.shape:
        raise MeshMismatch("trajectories were computed on different meshes or horizons")
    edges = _pct_field(_edge_flows(traj_a), _edge_flows(traj_b))
    nodes = _pct_field(traj_a.node_pressures(), traj_b.node_pressures())
    return edges, nodes


def add_error_fields(report: BenchReport, reference: str = "NL"):
    """Fill the report's error fields of every scheme against ``reference``."""
    ref = report.trajectories.get(reference)
    if ref is None:
        return report
    net = ref.mesh.network
    edge_ids = [(p.id, "pipe") for p in net.pipes] + [(c.id, "compressor") for c in net.compressors]
    for scheme, traj in report.trajectories.items():
        if scheme == reference:
            continue
        ef, nf = diff_solutions(traj, ref)
        report.edge_errors += [(scheme, reference, eid, kind, v) for (eid, kind), v in zip(edge_ids, ef)]
        report.node_errors += [(scheme, reference, nid, v) for nid, v in zip(net.node_ids, nf)]
    return report


def run_bench(case: BenchCase, convergence: bool = False, n_h_list=(2, 4, 6, 8, 10),
              ref_n_h: int = 20, ref_dt: float = 60.0) -> BenchReport:
    report = run_scheme_matrix(case)
    add_error_fields(report)
    if convergence:
        report.convergence = run_convergence_study(case, n_h_list, ref_n_h, ref_dt)
    return report


def replay_objective(case: BenchCase, kappa) -> float:
    """J re-evaluated by simulating the stored ratios from scratch."""
    net = case.load()
    traj = simulate(net, build_mesh(net, MeshOptions(case.n_h)), np.asarray(kappa, float),
                    case.solver_options(), retain_factors=False)
    return objective_cost(traj)


__all__ = [
    "BenchCase", "BenchReport", "ConvergenceRow", "SchemeRow", "SHIPPED", "add_error_fields",
    "diff_solutions", "replay_objective", "run_bench", "run_convergence_study", "run_scheme_matrix",
    "shipped_case", "shipped_network_path",
]

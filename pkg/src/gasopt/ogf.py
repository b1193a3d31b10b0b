"""Reduced-space optimal gas flow: minimise fuel use over compressor ratios.

Each evaluation at a ratio vector runs one simulation, evaluates the cost and
pressure constraints, and obtains every gradient by one adjoint sweep per
functional.  Optimisers talk to the problem only through :class:`Callbacks`,
so the built-in augmented-Lagrangian method and any external NLP method use
the same interface.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

from .adjoint import CostFunctional, functional_gradient
from .errors import BridgeError, InvalidValue, IterationLimit, SimulationError, SimulationFailure
from .lumping import LumpingConfig, LumpingScheme, assemble_constraints, monitored_indices
from .mesh import Mesh
from .network import GasNetwork
from .simulator import SolverOptions, Trajectory, objective_cost, simulate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerOptions:
    stat_tol: float = 1e-4
    feas_tol: float = 1e-6
    max_outer: int = 100
    rho0: float = 10.0
    rho_growth: float = 10.0
    rho_max: float = 1e12
    inner_max_iter: int = 200
    initial_guess: Optional[tuple] = None  # None: all ratios at 1
    # skip gradients of unlumped constraints far from their bound (off by default)
    nl_active_margin: Optional[float] = None

    def __post_init__(self):
        if self.stat_tol <= 0 or self.feas_tol <= 0:
            raise InvalidValue("tolerances must be positive")
        if self.max_outer < 1 or self.rho0 <= 0 or self.rho_growth <= 1:
            raise InvalidValue("need max_outer >= 1, rho0 > 0, rho_growth > 1")


@dataclass
class OGFProblem:
    network: GasNetwork
    mesh: Mesh
    scheme: LumpingScheme = LumpingScheme.FL
    lumping: LumpingConfig = field(default_factory=LumpingConfig)
    solver: SolverOptions = field(default_factory=SolverOptions)
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        self.scheme = LumpingScheme.parse(self.scheme)
        comps = self.network.compressors
        lo = np.array([c.kappa_min for c in comps], float)
        hi = np.array([c.kappa_max for c in comps], float)
        self.lower = lo if self.lower is None else np.asarray(self.lower, float)
        self.upper = hi if self.upper is None else np.asarray(self.upper, float)
        if self.lower.shape != lo.shape or self.upper.shape != hi.shape:
            raise InvalidValue("control bounds must have one entry per compressor")
        if np.any(self.lower < lo - 1e-15) or np.any(self.upper > hi + 1e-15) or np.any(self.lower > self.upper):
            raise InvalidValue("control bounds inconsistent with compressor records")

    @property
    def n_controls(self) -> int:
        return len(self.network.compressors)

    @property
    def control_ids(self):
        return [c.id for c in self.network.compressors]


@dataclass
class IterationRecord:
    iter: int
    J: float
    max_violation: float
    proj_grad_norm: float
    simulations: int
    linear_solves: int
    wall_ms: float
    merit_start: float = float("nan")
    merit_end: float = float("nan")


@dataclass
class OGFSolution:
    kappa: np.ndarray
    J: float
    iterations: int
    log: list
    min_pressure: float
    max_pressure: float
    max_violation: float
    converged: bool
    status: str
    simulations: int
    adjoint_solves: int
    wall_time: float
    trajectory: Optional[Trajectory] = field(default=None, repr=False)

    def to_dict(self, control_ids=None):
        ids = control_ids or [f"c{i}" for i in range(len(self.kappa))]
        return {
            "kappa": {cid: float(k) for cid, k in zip(ids, self.kappa)},
            "J": float(self.J),
            "min_pressure": self.min_pressure,
            "max_pressure": self.max_pressure,
            "max_violation": self.max_violation,
            "iterations": self.iterations,
            "converged": self.converged,
            "status": self.status,
            "simulations": self.simulations,
            "adjoint_solves": self.adjoint_solves,
        }

    def write(self, path, control_ids=None):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(control_ids), fh, indent=2)

    def write_log(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "J", "max_violation", "proj_grad_norm", "simulations", "linear_solves", "wall_ms"])
            for r in self.log:
                w.writerow([r.iter, repr(float(r.J)), repr(float(r.max_violation)), repr(float(r.proj_grad_norm)),
                            r.simulations, r.linear_solves, f"{r.wall_ms:.3f}"])


# ---------------------------------------------------------------------------
# evaluation + callbacks
# ---------------------------------------------------------------------------


@dataclass
class Evaluation:
    u: np.ndarray
    J: float
    grad: np.ndarray
    c: np.ndarray  # normalised constraints, feasible when <= 0
    jac: np.ndarray  # (n_constraints, n_controls)
    trajectory: Trajectory
    adjoint_solves: int


class Callbacks:
    """Objective/constraint oracle handed to optimisation methods.

    Constraints are reported in ``c(u) <= 0`` form.  Every distinct ``u``
    triggers exactly one simulation; repeated queries reuse the cached result.
    """

    def __init__(self, problem: OGFProblem, cache_size: int = 8):
        self.problem = problem
        N = problem.solver.n_steps
        self.constraints = assemble_constraints(problem.mesh, N, problem.scheme, problem.lumping)
        self.objective = CostFunctional()
        self.lower = problem.lower.copy()
        self.upper = problem.upper.copy()
        x0 = problem.optimizer.initial_guess
        self.x0 = np.ones(problem.n_controls) if x0 is None else np.asarray(x0, float).copy()
        self.x0 = np.clip(self.x0, self.lower, self.upper)
        self.simulations = 0
        self.adjoint_solves = 0
        self.newton_solves = 0
        self._cache = {}
        self._order = []
        self._cache_size = cache_size
        self.active_margin = problem.optimizer.nl_active_margin if problem.scheme is LumpingScheme.NL else None

    @property
    def n(self) -> int:
        return self.problem.n_controls

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)

    def _check(self, u):
        try:
            u = np.asarray(u, dtype=float).reshape(-1)
        except (TypeError, ValueError):
            raise BridgeError("controls must be a numeric vector") from None
        if u.shape != (self.n,):
            raise BridgeError(f"expected {self.n} controls, got shape {u.shape}")
        if not np.all(np.isfinite(u)):
            raise BridgeError("controls must be finite")
        if np.any(u < self.lower - 1e-12) or np.any(u > self.upper + 1e-12):
            raise BridgeError(f"controls {u} violate the bounds")
        return np.clip(u, self.lower, self.upper)

    def evaluate(self, u) -> Evaluation:
        u = self._check(u)
        key = u.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        p = self.problem
        try:
            traj = simulate(p.network, p.mesh, u, p.solver)
        except SimulationError as exc:
            raise SimulationFailure(u, exc) from exc
        self.simulations += 1
        self.newton_solves += traj.stats.linear_solves
        before = traj.stats.linear_solves
        J = self.objective.value(traj)
        grad = functional_gradient(traj, self.objective)
        vals = np.array([f.value(traj) for f in self.constraints])
        c = np.array([f.normalized(v) for f, v in zip(self.constraints, vals)])
        jac = np.zeros((len(self.constraints), self.n))
        sign = np.array([1.0 if f.side == "upper" else -1.0 for f in self.constraints])
        for i, f in enumerate(self.constraints):
            if self.active_margin is not None and c[i] < -self.active_margin:
                continue
            jac[i] = sign[i] * functional_gradient(traj, f)
        solves = traj.stats.linear_solves - before
        self.adjoint_solves += solves
        ev = Evaluation(u, J, grad, c, jac, traj, solves)
        self._cache[key] = ev
        self._order.append(key)
        if len(self._order) > self._cache_size:
            self._cache.pop(self._order.pop(0), None)
        return ev

    # the flat callback surface external methods consume
    def objective_value(self, u) -> float:
        return self.evaluate(u).J

    def objective_gradient(self, u) -> np.ndarray:
        return self.evaluate(u).grad.copy()

    def constraint_values(self, u) -> np.ndarray:
        return self.evaluate(u).c.copy()

    def constraint_jacobian(self, u) -> np.ndarray:
        return self.evaluate(u).jac.copy()

    def bounds(self):
        return self.lower.copy(), self.upper.copy()

    @property
    def linear_solves(self) -> int:
        return self.newton_solves + self.adjoint_solves


def _proj_grad(u, g, lo, hi):
    return float(np.max(np.abs(np.clip(u - g, lo, hi) - u))) if len(u) else 0.0


def _solution(cb: Callbacks, u, log_, status, converged, t0) -> OGFSolution:
    ev = cb.evaluate(u)
    nodes = monitored_indices(cb.problem.mesh, cb.problem.lumping)
    P = ev.trajectory.node_pressures()[1:, nodes]
    if P.size == 0:
        P = ev.trajectory.node_pressures()[:, nodes]
    J = objective_cost(ev.trajectory)
    viol = float(max(0.0, ev.c.max())) if len(ev.c) else 0.0
    return OGFSolution(
        kappa=ev.u.copy(), J=J, iterations=len(log_), log=log_,
        min_pressure=float(P.min()), max_pressure=float(P.max()), max_violation=viol,
        converged=converged, status=status, simulations=cb.simulations,
        adjoint_solves=cb.adjoint_solves, wall_time=time.perf_counter() - t0,
        trajectory=ev.trajectory,
    )


# ---------------------------------------------------------------------------
# built-in augmented Lagrangian
# ---------------------------------------------------------------------------


def augmented_lagrangian(cb: Callbacks, options: OptimizerOptions):
    """Bound-constrained PHR augmented Lagrangian with an L-BFGS-B inner solve.

    Returns ``(u, log, status, converged)``.
    """
    t0 = time.perf_counter()
    lo, hi = cb.bounds()
    u = cb.x0.copy()
    m = cb.n_constraints
    lam = np.zeros(m)
    rho = options.rho0
    log_ = []

    ev0 = cb.evaluate(u)
    # objective scale: fuel use if every unit ran at its upper ratio with current flows
    _, m_out, _ = ev0.trajectory.compressor_flows()
    mesh = cb.problem.mesh
    full = mesh.comp_K * (hi ** mesh.comp_gamma - 1.0)
    J_scale = float(cb.problem.solver.dt * (np.abs(m_out[1:]) @ full).sum()) if len(full) else 1.0
    J_scale = max(J_scale, abs(ev0.J), 1e-12)

    def kkt(ev, lam_):
        g = ev.grad / J_scale + (ev.jac.T @ lam_ if m else 0.0)
        pg = _proj_grad(ev.u, g, lo, hi)
        viol = float(max(0.0, ev.c.max())) if m else 0.0
        comp = float(np.max(np.minimum(lam_, np.abs(ev.c)))) if m else 0.0
        return pg, viol, comp

    pg, viol, comp = kkt(ev0, lam)
    if viol <= options.feas_tol and pg <= options.stat_tol:
        return u, log_, "converged", True

    def merit(v, lam_, rho_):
        ev = cb.evaluate(v)
        shifted = np.maximum(0.0, lam_ + rho_ * ev.c) if m else np.zeros(0)
        val = ev.J / J_scale + (shifted @ shifted - lam_ @ lam_) / (2.0 * rho_)
        grad = ev.grad / J_scale + (ev.jac.T @ shifted if m else 0.0)
        return val, grad

    prev_viol = viol
    inner_tol = max(options.stat_tol * 0.1, 1e-10)
    for k in range(1, options.max_outer + 1):
        start_val, _ = merit(u, lam, rho)
        res = minimize(
            merit, u, args=(lam, rho), jac=True, method="L-BFGS-B",
            bounds=list(zip(lo, hi)),
            options={"maxiter": options.inner_max_iter, "gtol": inner_tol, "ftol": 1e-15},
        )
        cand = np.clip(res.x, lo, hi)
        end_val, _ = merit(cand, lam, rho)
        if end_val > start_val:
            cand, end_val = u, start_val
        u = cand
        ev = cb.evaluate(u)
        if m:
            lam = np.maximum(0.0, lam + rho * ev.c)
        pg, viol, comp = kkt(ev, lam)
        log_.append(IterationRecord(
            k, ev.J, viol, pg, cb.simulations, cb.linear_solves,
            1e3 * (time.perf_counter() - t0), start_val, end_val,
        ))
        log.debug("AL iter %d: J=%.6g viol=%.3e pg=%.3e rho=%.1e", k, ev.J, viol, pg, rho)
        if viol <= options.feas_tol and pg <= options.stat_tol and comp <= options.feas_tol:
            return u, log_, "converged", True
        if viol > 0.25 * prev_viol and viol > options.feas_tol:
            rho = min(rho * options.rho_growth, options.rho_max)
        prev_viol = viol
    return u, log_, "iteration_limit", False


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------


Method = Callable[[Callbacks], object]


def external_solver_bridge(problem: OGFProblem, method: Method) -> OGFSolution:
    """Run an NLP ``method`` against the problem's callbacks.

    ``method(callbacks)`` returns either the final control vector, an object
    with an ``x`` attribute (e.g. ``scipy.optimize.OptimizeResult``), or a
    ``(u, log, status, converged)`` tuple as produced by
    :func:`augmented_lagrangian`.
    """
    t0 = time.perf_counter()
    cb = Callbacks(problem)
    if cb.n == 0:
        traj = simulate(problem.network, problem.mesh, np.zeros(0), problem.solver)
        P = traj.node_pressures()[1:] if traj.n_steps else traj.node_pressures()
        return OGFSolution(np.zeros(0), 0.0, 0, [], float(P.min()), float(P.max()), 0.0, True,
                           "no_controls", 1, 0, time.perf_counter() - t0, traj)
    out = method(cb)
    if isinstance(out, tuple) and len(out) == 4:
        u, log_, status, converged = out
    else:
        u = getattr(out, "x", out)
        log_ = []
        status = "external"
        converged = bool(getattr(out, "success", True))
    try:
        u = np.asarray(u, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise BridgeError("method returned a non-numeric result") from None
    u = cb._check(u)
    sol = _solution(cb, u, list(log_), status, converged, t0)
    if not log_:
        sol.iterations = int(getattr(out, "nit", 0) or 0)
    return sol


def solve_ogf(problem: OGFProblem) -> OGFSolution:
    """Solve the OGF problem with the built-in augmented-Lagrangian method.

    Raises :class:`IterationLimit` (carrying the best feasible point seen, if
    any) when the outer iteration budget runs out.
    """
    opts = problem.optimizer
    best = {}

    def method(cb):
        orig = cb.evaluate

        def tracking(u):
            ev = orig(u)
            v = float(max(0.0, ev.c.max())) if len(ev.c) else 0.0
            if v <= opts.feas_tol and ("J" not in best or ev.J < best["J"]):
                best.update(J=ev.J, u=ev.u.copy())
            return ev

        cb.evaluate = tracking
        return augmented_lagrangian(cb, opts)

    sol = external_solver_bridge(problem, method)
    if not sol.converged and sol.status == "iteration_limit":
        fallback = None
        if "u" in best:
            cb = Callbacks(problem)
            fallback = _solution(cb, best["u"], sol.log, "iteration_limit", False, time.perf_counter())
        raise IterationLimit(
            f"no KKT point within {opts.max_outer} outer iterations "
            f"(max violation {sol.max_violation:.3e})",
            solution=fallback,
        )
    return sol

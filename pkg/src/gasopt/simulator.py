"""Implicit finite-volume simulation of isothermal gas flow in a network.

Each time level solves ``g(x^n, x^{n-1}, kappa) = 0`` with Newton's method,
starting from the previous state.  Rows are written in physical units with
``p_phys = pressure_base * p``:

* mass, per volume:      P0 (p_I - p_I^prev)/dt + c^2 (m_r - m_l) / (A dx)
* momentum, per volume:  (m_I - m_I^prev)/dt + A P0 (p_r - p_l)/dx
                         + f c^2 |m_I| m_I / (2 D A P0 p_I)
* node balance:          sum(outflows) - sum(inflows) - (supply - demand)
* slack node:            p - p_slack
* compressor:            p_out - kappa p_in;  m_con - K m_out (kappa^gamma - 1);
                         m_in - m_con - m_out

``p_I`` and ``m_I`` are the two-point averages over a volume.  Passing
``dt=None`` drops the time terms and gives the steady-state system.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import (
    DegeneratePressure,
    FlowReversalLoop,
    InvalidValue,
    NoConvergence,
    SimulationError,
    StepFailure,
)
from .mesh import Mesh
from .network import SUPPLY, evaluate_boundary

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 50
    cont_eps: float = 0.01
    cont_stages: int = 5
    dt: float = 600.0
    horizon: float = 86400.0
    equilibrate: bool = False
    # derivative floor on |m| used only for cold steady-state solves, kg/s
    steady_floor: float = 1e-2

    def __post_init__(self):
        if self.tol <= 0 or self.dt <= 0 or self.horizon < 0:
            raise InvalidValue("need tol > 0, dt > 0, horizon >= 0")
        n = self.horizon / self.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise InvalidValue("horizon must be a multiple of dt")
        if self.max_iter < 1 or self.cont_stages < 1:
            raise InvalidValue("max_iter and cont_stages must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class SolveStats:
    factorizations: int = 0
    linear_solves: int = 0
    newton_iterations: int = 0


# ---------------------------------------------------------------------------
# boundary data
# ---------------------------------------------------------------------------


def node_injections(mesh: Mesh, t: float, horizon: float) -> np.ndarray:
    """Net injection ``supply - demand`` per network node at time ``t`` (kg/s)."""
    net = mesh.network
    conv = net.constants.profile_convention
    inj = np.zeros(mesh.n_nodes)
    for prof in net.profiles:
        v = evaluate_boundary(prof, t, horizon, conv)
        inj[mesh.node_index[prof.node]] += v if prof.role == SUPPLY else -v
    return inj


def flow_reference(mesh: Mesh) -> float:
    """Characteristic flow magnitude used to floor relative residual scales."""
    loads = [abs(p.L0) for p in mesh.network.profiles]
    return max(max(loads, default=0.0), 1.0)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


class _Pattern:
    """Fixed COO sparsity pattern of the Jacobian for one mesh."""

    def __init__(self, mesh: Mesh):
        nv = mesh.n_volumes
        rm, rp = mesh.row_vol_mass, mesh.row_vol_mom
        rows = [rm, rm, rm, rm, rp, rp, rp, rp]
        cols = [mesh.vol_pl, mesh.vol_pr, mesh.vol_ml, mesh.vol_mr,
                mesh.vol_pl, mesh.vol_pr, mesh.vol_ml, mesh.vol_mr]
        node_rows = mesh.row_node0 + mesh.inc_node
        keep = mesh.inc_node != mesh.slack_index
        rows.append(node_rows[keep])
        cols.append(mesh.inc_col[keep])
        rows.append(np.array([mesh.row_node0 + mesh.slack_index]))
        cols.append(np.array([mesh.slack_pcol]))
        nc = mesh.n_comp
        r0 = mesh.row_comp0 + 3 * np.arange(nc)
        rows += [r0, r0, r0 + 1, r0 + 1, r0 + 2, r0 + 2, r0 + 2]
        cols += [mesh.comp_pout, mesh.comp_pin, mesh.comp_mcon, mesh.comp_mout,
                 mesh.comp_min, mesh.comp_mcon, mesh.comp_mout]
        self.rows = np.concatenate(rows).astype(int)
        self.cols = np.concatenate(cols).astype(int)
        self.node_keep = keep
        self.node_sign = mesh.inc_sign[keep]
        self.nv = nv
        self.shape = (mesh.n_rows, mesh.n_unknowns)


def _pattern(mesh: Mesh) -> _Pattern:
    pat = mesh.__dict__.get("_pattern")
    if pat is None:
        pat = _Pattern(mesh)
        mesh.__dict__["_pattern"] = pat
    return pat


def _evaluate(mesh, x, x_prev, kappa, dt, inj, m_ref, want_jac, floor=0.0):
    """Residual, per-row scale and (optionally) Jacobian data in pattern order."""
    x = np.asarray(x, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    P0 = mesh.network.constants.pressure_base
    p_set = mesh.network.constants.slack_pressure
    g = np.empty(mesh.n_rows)
    s = np.empty(mesh.n_rows)

    pl, pr = x[mesh.vol_pl], x[mesh.vol_pr]
    ml, mr = x[mesh.vol_ml], x[mesh.vol_mr]
    pI = 0.5 * (pl + pr)
    mI = 0.5 * (ml + mr)
    if np.any(~(pI > 0)):
        bad = int(np.flatnonzero(~(pI > 0))[0])
        pipe = mesh.network.pipes[mesh.vol_pipe[bad]].id
        raise DegeneratePressure(f"non-positive average pressure in pipe {pipe!r} (volume {bad})")
    a = mesh.c2_over_Adx
    b = mesh.A_over_dx
    fc = mesh.fric_coef
    fric = fc * np.abs(mI) * mI / pI
    g_mass = a * (mr - ml)
    g_mom = b * (pr - pl) + fric
    s_mass = a * (np.abs(mr) + np.abs(ml)) + 2.0 * a * m_ref
    s_mom = b * (np.abs(pr) + np.abs(pl)) + np.abs(fric) + 2.0 * b + fc * m_ref**2
    if dt is not None:
        pI0 = 0.5 * (x_prev[mesh.vol_pl] + x_prev[mesh.vol_pr])
        mI0 = 0.5 * (x_prev[mesh.vol_ml] + x_prev[mesh.vol_mr])
        g_mass = g_mass + P0 * (pI - pI0) / dt
        g_mom = g_mom + (mI - mI0) / dt
        s_mass = s_mass + P0 * (np.abs(pI) + np.abs(pI0) + 2.0) / dt
        s_mom = s_mom + (np.abs(mI) + np.abs(mI0) + 2.0 * m_ref) / dt
    g[mesh.row_vol_mass] = g_mass
    g[mesh.row_vol_mom] = g_mom
    s[mesh.row_vol_mass] = s_mass
    s[mesh.row_vol_mom] = s_mom

    flows = mesh.inc_sign * x[mesh.inc_col]
    g_node = np.bincount(mesh.inc_node, flows, minlength=mesh.n_nodes) - inj
    s_node = np.bincount(mesh.inc_node, np.abs(flows), minlength=mesh.n_nodes) + np.abs(inj) + m_ref
    k = mesh.slack_index
    g_node[k] = x[mesh.slack_pcol] - p_set
    s_node[k] = abs(x[mesh.slack_pcol]) + p_set + 1.0
    g[mesh.row_node0:mesh.row_comp0] = g_node
    s[mesh.row_node0:mesh.row_comp0] = s_node

    if mesh.n_comp:
        pin, pout = x[mesh.comp_pin], x[mesh.comp_pout]
        m_in, m_out, m_con = x[mesh.comp_min], x[mesh.comp_mout], x[mesh.comp_mcon]
        factor = mesh.comp_K * (kappa ** mesh.comp_gamma - 1.0)
        r0 = mesh.row_comp0
        g[r0::3] = pout - kappa * pin
        g[r0 + 1::3] = m_con - factor * m_out
        g[r0 + 2::3] = m_in - m_con - m_out
        s[r0::3] = np.abs(pout) + kappa * np.abs(pin) + 1.0
        s[r0 + 1::3] = np.abs(m_con) + np.abs(factor * m_out) + m_ref
        s[r0 + 2::3] = np.abs(m_in) + np.abs(m_con) + np.abs(m_out) + m_ref

    if not want_jac:
        return g, s, None

    pat = _pattern(mesh)
    absm = np.abs(mI)
    if floor > 0:
        absm = np.maximum(absm, floor)
    d_fric_dp = -0.5 * fc * np.abs(mI) * mI / pI**2
    d_fric_dm = 0.5 * fc * 2.0 * absm / pI
    tp = 0.5 * P0 / dt if dt is not None else 0.0
    tm = 0.5 / dt if dt is not None else 0.0
    one = np.ones(mesh.n_volumes)
    parts = [
        tp * one, tp * one, -a, a,
        -b + d_fric_dp, b + d_fric_dp, d_fric_dm + tm, d_fric_dm + tm,
        pat.node_sign, np.array([1.0]),
    ]
    if mesh.n_comp:
        nc = mesh.n_comp
        factor = mesh.comp_K * (kappa ** mesh.comp_gamma - 1.0)
        parts += [np.ones(nc), -kappa, np.ones(nc), -factor, np.ones(nc), -np.ones(nc), -np.ones(nc)]
    data = np.concatenate(parts)
    return g, s, data


def _matrix(mesh, data):
    pat = _pattern(mesh)
    return sp.csc_matrix((data, (pat.rows, pat.cols)), shape=pat.shape)


def _rel_norm(g, s):
    return float(np.max(np.abs(g) / s)) if len(g) else 0.0


def residual(mesh, x_n, x_prev, u, dt, t_n, horizon=None, injections=None):
    """Residual vector ``g^n``; ``dt=None`` gives the steady-state system."""
    inj = injections if injections is not None else node_injections(mesh, t_n, horizon if horizon is not None else t_n)
    g, _, _ = _evaluate(mesh, x_n, x_prev, u, dt, inj, flow_reference(mesh), False)
    return g


def relative_residual_norm(mesh, x_n, x_prev, u, dt, t_n, horizon=None, injections=None):
    inj = injections if injections is not None else node_injections(mesh, t_n, horizon if horizon is not None else t_n)
    g, s, _ = _evaluate(mesh, x_n, x_prev, u, dt, inj, flow_reference(mesh), False)
    return _rel_norm(g, s)


def jacobian(mesh, x_n, x_prev, u, dt, t_n, horizon=None, injections=None):
    """Sparse analytic Jacobian ``dg^n/dx^n`` (CSC)."""
    inj = injections if injections is not None else node_injections(mesh, t_n, horizon if horizon is not None else t_n)
    _, _, data = _evaluate(mesh, x_n, x_prev, u, dt, inj, flow_reference(mesh), True)
    return _matrix(mesh, data)


def coupling_matrix(mesh: Mesh, dt: float):
    """``dg^n/dx^{n-1}``: only the backward-Euler time terms couple levels."""
    P0 = mesh.network.constants.pressure_base
    rm, rp = mesh.row_vol_mass, mesh.row_vol_mom
    rows = np.concatenate([rm, rm, rp, rp])
    cols = np.concatenate([mesh.vol_pl, mesh.vol_pr, mesh.vol_ml, mesh.vol_mr])
    nv = mesh.n_volumes
    data = np.concatenate([np.full(2 * nv, -0.5 * P0 / dt), np.full(2 * nv, -0.5 / dt)])
    return sp.csc_matrix((data, (rows, cols)), shape=(mesh.n_rows, mesh.n_unknowns))


def control_jacobian(mesh: Mesh, x: np.ndarray, kappa_eff: np.ndarray, active: np.ndarray):
    """Dense ``dg^n/du`` of shape (rows, compressors); zero for inactive units."""
    x = np.asarray(x)
    G = np.zeros((mesh.n_rows, mesh.n_comp))
    for c in range(mesh.n_comp):
        if not active[c]:
            continue
        r0 = mesh.row_comp0 + 3 * c
        G[r0, c] = -x[mesh.comp_pin[c]]
        G[r0 + 1, c] = -mesh.comp_K[c] * x[mesh.comp_mout[c]] * mesh.comp_gamma[c] * kappa_eff[c] ** (mesh.comp_gamma[c] - 1.0)
    return G


# ---------------------------------------------------------------------------
# Newton solves
# ---------------------------------------------------------------------------


def _newton(mesh, guess, x_prev, kappa, dt, inj, options, stats=None, floor=0.0):
    x = np.array(guess, dtype=float)
    m_ref = flow_reference(mesh)
    norm = np.inf
    for it in range(options.max_iter + 1):
        g, s, data = _evaluate(mesh, x, x_prev, kappa, dt, inj, m_ref, True, floor)
        norm = _rel_norm(g, s)
        if not np.isfinite(norm):
            raise NoConvergence(it, norm)
        if norm <= options.tol:
            if stats is not None:
                stats.newton_iterations += it
            return x, it, norm
        if it == options.max_iter:
            break
        J = _matrix(mesh, data)
        if options.equilibrate:
            scale = sp.diags(1.0 / s)
            J, g = scale @ J, g / s
        try:
            lu = splu(J)
        except RuntimeError as exc:  # exactly singular
            raise NoConvergence(it, norm, f"singular Jacobian at Newton iteration {it}: {exc}") from None
        dx = lu.solve(g)
        if stats is not None:
            stats.factorizations += 1
            stats.linear_solves += 1
        x -= dx
        if not np.all(np.isfinite(x)):
            raise NoConvergence(it + 1, np.inf)
    raise NoConvergence(options.max_iter, norm)


def solve_timestep(mesh, x_prev, u, dt, t_n, options: SolverOptions, *, injections=None,
                   guess=None, stats=None, floor=0.0):
    """One implicit step by plain Newton from ``guess`` (default ``x_prev``).

    Returns ``(state, newton_iterations, relative_norm)``.  ``dt=None`` solves
    the steady-state system instead.
    """
    inj = injections if injections is not None else node_injections(mesh, t_n, options.horizon)
    start = x_prev if guess is None else guess
    return _newton(mesh, start, x_prev, np.asarray(u, float), dt, inj, options, stats, floor)


def continuation_schedule(target, options: SolverOptions):
    """Linear ramp of ratios from ``1 + eps`` to ``target`` in ``cont_stages`` solves."""
    target = np.asarray(target, dtype=float)
    start = np.minimum(1.0 + options.cont_eps, target)
    S = options.cont_stages
    if S == 1:
        return [target.copy()]
    return [start + (target - start) * k / (S - 1) for k in range(S)]


def continuation_solve(mesh, x_prev, u, dt, t_n, options: SolverOptions, *, injections=None,
                       guess=None, stats=None, floor=0.0):
    """Solve with the compressor ratios ramped up from ``1 + eps``.

    Each stage is warm-started from the previous one; the returned state
    satisfies the tolerance for the true ratios ``u``.
    """
    inj = injections if injections is not None else node_injections(mesh, t_n, options.horizon)
    x = np.array(x_prev if guess is None else guess, dtype=float)
    total = 0
    norm = np.inf
    for kappa in continuation_schedule(u, options):
        x, it, norm = _newton(mesh, x, x_prev, kappa, dt, inj, options, stats, floor)
        total += it
    return x, total, norm


def _robust_solve(mesh, x_prev, kappa, dt, inj, options, guess, stats, floor):
    try:
        return _newton(mesh, guess, x_prev, kappa, dt, inj, options, stats, floor)
    except (NoConvergence, DegeneratePressure) as exc:
        log.debug("plain Newton failed (%s); trying continuation", exc)
        return continuation_solve(mesh, x_prev, kappa, dt, None, options, injections=inj,
                                  guess=guess, stats=stats, floor=floor)


def enforce_compressor_flow(mesh, x, kappa, solve):
    """Switch off compressors with reversed flow and re-solve until none remain.

    ``solve(kappa_eff)`` must return a converged state for the given ratios.
    Returns ``(state, kappa_eff, deactivated)`` where ``deactivated`` is a
    boolean mask of units forced to ratio 1.
    """
    kappa = np.asarray(kappa, dtype=float)
    kappa_eff = kappa.copy()
    off = np.zeros(mesh.n_comp, dtype=bool)
    seen = set()
    while True:
        active = kappa_eff > 1.0
        reversed_ = active & (np.asarray(x)[mesh.comp_mout] < 0.0)
        if not reversed_.any():
            return x, kappa_eff, off
        off = off | reversed_
        key = tuple(np.flatnonzero(off))
        if key in seen:
            raise FlowReversalLoop(f"deactivation set {key} repeats without a fixpoint")
        seen.add(key)
        kappa_eff = np.where(off, 1.0, kappa)
        x = solve(kappa_eff)


def rest_state(mesh: Mesh, pressure: Optional[float] = None) -> np.ndarray:
    """Uniform no-flow state at the slack pressure."""
    p = mesh.network.constants.slack_pressure if pressure is None else pressure
    x = np.zeros(mesh.n_unknowns)
    x[mesh.grid_pcol] = p
    x[mesh.original_pcols] = p
    return x


def steady_state(mesh, u, options: SolverOptions, t=0.0, guess=None, stats=None):
    """Steady-state network state for ratios ``u`` and the boundary at time ``t``.

    Returns ``(state, kappa_eff, off_mask)``.
    """
    inj = node_injections(mesh, t, options.horizon)
    kappa = np.asarray(u, dtype=float)
    start = rest_state(mesh) if guess is None else np.asarray(guess, float)
    floor = options.steady_floor if guess is None else 0.0

    def solve(k):
        x, _, _ = _steady(mesh, start, k, inj, options, stats, floor)
        return x

    x = solve(kappa)
    return enforce_compressor_flow(mesh, x, kappa, solve)


def _steady(mesh, start, kappa, inj, options, stats, floor):
    try:
        x, it, norm = _robust_solve(mesh, start, kappa, None, inj, options, start, stats, floor)
    except (NoConvergence, DegeneratePressure):
        if floor <= 0:
            raise
        x, it, norm = _robust_solve(mesh, start, kappa, None, inj, options, start, stats, 0.0)
    if floor > 0:
        # the floor only shapes the path; finish with exact Newton steps
        x, it2, norm = _newton(mesh, x, x, kappa, None, inj, options, stats, 0.0)
        it += it2
    return x, it, norm


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    mesh: Mesh
    kappa: np.ndarray
    options: SolverOptions
    states: np.ndarray  # (N+1, n_unknowns)
    times: np.ndarray
    kappa_eff: np.ndarray  # (N+1, n_comp)
    injections: np.ndarray  # (N+1, n_nodes), slack entry 0
    residual_norms: np.ndarray
    newton_iterations: np.ndarray
    factors: list = field(repr=False, default_factory=list)
    stats: SolveStats = field(default_factory=SolveStats)

    @property
    def n_steps(self) -> int:
        return len(self.states) - 1

    @property
    def active(self) -> np.ndarray:
        """(N+1, n_comp) mask of units running at their nominal ratio (not switched off)."""
        return self.kappa_eff == self.kappa[None, :]

    def node_pressures(self) -> np.ndarray:
        """(N+1, |N0|) pressures at the original nodes."""
        return self.states[:, self.mesh.original_pcols]

    def compressor_flows(self):
        """``(m_in, m_out, m_con)`` arrays of shape (N+1, n_comp)."""
        m = self.mesh
        return self.states[:, m.comp_min], self.states[:, m.comp_mout], self.states[:, m.comp_mcon]

    def slack_injection(self) -> np.ndarray:
        m = self.mesh
        sel = m.inc_node == m.slack_index
        return self.states[:, m.inc_col[sel]] @ m.inc_sign[sel]

    def net_injections(self) -> np.ndarray:
        inj = self.injections.copy()
        inj[:, self.mesh.slack_index] = self.slack_injection()
        return inj

    def factor(self, n: int):
        """LU factorisation of ``dg^n/dx^n`` at the converged state (lazy)."""
        lu = self.factors[n]
        if lu is None:
            lu = splu(self.state_jacobian(n))
            self.factors[n] = lu
            self.stats.factorizations += 1
        return lu

    def state_jacobian(self, n: int):
        dt = None if n == 0 else self.options.dt
        prev = self.states[max(n - 1, 0)]
        _, _, data = _evaluate(self.mesh, self.states[n], prev, self.kappa_eff[n], dt,
                               self.injections[n], flow_reference(self.mesh), True)
        return _matrix(self.mesh, data)


def simulate(network, mesh: Mesh, u, options: SolverOptions, *, retain_factors=True) -> Trajectory:
    """Steady initial state followed by ``N = horizon/dt`` implicit steps."""
    if mesh.network is not network and mesh.network != network:
        raise InvalidValue("mesh was built for a different network")
    kappa = np.asarray(u, dtype=float).reshape(-1)
    if kappa.size != mesh.n_comp:
        raise InvalidValue(f"expected {mesh.n_comp} compressor ratios, got {kappa.size}")
    N = options.n_steps
    stats = SolveStats()
    states = np.empty((N + 1, mesh.n_unknowns))
    k_eff = np.empty((N + 1, mesh.n_comp))
    injs = np.empty((N + 1, mesh.n_nodes))
    norms = np.empty(N + 1)
    iters = np.zeros(N + 1, dtype=int)
    times = np.arange(N + 1) * options.dt

    try:
        x0, ke, _ = steady_state(mesh, kappa, options, 0.0, stats=stats)
    except SimulationError as exc:
        raise StepFailure(0, exc) from exc
    states[0], k_eff[0] = x0, ke
    injs[0] = node_injections(mesh, 0.0, options.horizon)
    norms[0] = relative_residual_norm(mesh, x0, x0, ke, None, 0.0, injections=injs[0])

    for n in range(1, N + 1):
        inj = node_injections(mesh, times[n], options.horizon)
        prev = states[n - 1]
        before = stats.newton_iterations

        def solve(k, prev=prev, inj=inj):
            x, _, _ = _robust_solve(mesh, prev, k, options.dt, inj, options, prev, stats, 0.0)
            return x

        try:
            x = solve(kappa)
            x, ke, _ = enforce_compressor_flow(mesh, x, kappa, solve)
        except SimulationError as exc:
            raise StepFailure(n, exc) from exc
        states[n], k_eff[n], injs[n] = x, ke, inj
        norms[n] = relative_residual_norm(mesh, x, prev, ke, options.dt, times[n], injections=inj)
        iters[n] = stats.newton_iterations - before

    traj = Trajectory(mesh, kappa, options, states, times, k_eff, injs, norms, iters,
                      [None] * (N + 1), stats)
    if retain_factors:
        for n in range(N + 1):
            traj.factor(n)
    return traj


def objective_cost(trajectory: Trajectory, u=None) -> float:
    """Total compressor fuel use ``sum_n dt * sum_c m_con`` in kg."""
    if trajectory.n_steps == 0 or trajectory.mesh.n_comp == 0:
        return 0.0
    m_con = trajectory.states[1:, trajectory.mesh.comp_mcon]
    return float(trajectory.options.dt * m_con.sum())


def mass_balance_errors(trajectory: Trajectory) -> np.ndarray:
    """Relative mismatch of the discrete linepack identity at each step 1..N.

    ``sum_I linepack_I (p_I^n - p_I^{n-1}) = dt (supplies - demands - consumption)``
    where the slack injection counts as a supply.
    """
    m = trajectory.mesh
    X = trajectory.states
    pI = 0.5 * (X[:, m.vol_pl] + X[:, m.vol_pr])
    lhs = (pI[1:] - pI[:-1]) @ m.vol_linepack
    inj = trajectory.net_injections()[1:]
    con = X[1:, m.comp_mcon].sum(axis=1) if m.n_comp else np.zeros(len(lhs))
    dt = trajectory.options.dt
    rhs = dt * (inj.sum(axis=1) - con)
    scale = dt * (np.abs(inj).sum(axis=1) + np.abs(con)) + np.abs(lhs)
    scale = np.maximum(scale, dt * flow_reference(m))
    return np.abs(lhs - rhs) / scale


def with_options(options: SolverOptions, **kw) -> SolverOptions:
    return replace(options, **kw)

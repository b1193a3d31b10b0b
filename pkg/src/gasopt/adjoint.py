"""Discrete adjoint gradients of trajectory functionals w.r.t. compressor ratios.

For a scalar ``h(x^0..x^N, u)`` the multipliers solve, backwards in time,

    (dg^n/dx^n)^T lam^n = -(dg^{n+1}/dx^n)^T lam^{n+1} - dh/dx^n

and the reduced gradient is ``dh/du + sum_n (lam^n)^T dg^n/du``.  The sweep
includes the steady initial state (``n = 0``) because ``x^0`` is itself
computed from the ratios.  Transposed solves reuse the LU factors stored on
the trajectory.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import SingularAdjointSystem
from .simulator import Trajectory, coupling_matrix, objective_cost, simulate

log = logging.getLogger(__name__)


class Functional:
    """Scalar function of a trajectory with per-step state partials.

    Subclasses implement :meth:`value` and :meth:`state_partials`; the latter
    returns ``{n: (columns, values)}`` holding ``dh/dx^n`` with any step weight
    already applied.  ``control_partials`` defaults to zero.
    """

    id = "functional"
    weight = 1.0
    sense = None  # "<=" or ">=" for constraints, None for objectives
    bound = 1.0

    def value(self, traj: Trajectory) -> float:
        raise NotImplementedError

    def state_partials(self, traj: Trajectory) -> dict:
        raise NotImplementedError

    def control_partials(self, traj: Trajectory) -> np.ndarray:
        return np.zeros(traj.mesh.n_comp)

    def last_step(self, traj: Trajectory) -> int:
        parts = self.state_partials(traj)
        return max(parts) if parts else -1

    def __rmul__(self, a):
        return LinearCombination([(a, self)])

    def __add__(self, other):
        return LinearCombination([(1.0, self), (1.0, other)])


class CostFunctional(Functional):
    """Compressor fuel use ``J = sum_n dt sum_c m_con^n``; step weight is dt."""

    id = "cost"

    def value(self, traj):
        return objective_cost(traj)

    def state_partials(self, traj):
        m = traj.mesh
        cols = m.comp_mcon
        if len(cols) == 0:
            return {}
        w = np.full(len(cols), traj.options.dt)
        return {n: (cols, w) for n in range(1, traj.n_steps + 1)}


class LinearCombination(Functional):
    def __init__(self, terms):
        self.terms = list(terms)
        self.id = "+".join(f"{a:g}*{f.id}" for a, f in self.terms)

    def value(self, traj):
        return sum(a * f.value(traj) for a, f in self.terms)

    def state_partials(self, traj):
        out = {}
        for a, f in self.terms:
            for n, (cols, vals) in f.state_partials(traj).items():
                c0, v0 = out.get(n, (np.zeros(0, int), np.zeros(0)))
                out[n] = (np.concatenate([c0, cols]), np.concatenate([v0, a * np.asarray(vals)]))
        return out

    def control_partials(self, traj):
        return sum(a * f.control_partials(traj) for a, f in self.terms)

    def __add__(self, other):
        extra = other.terms if isinstance(other, LinearCombination) else [(1.0, other)]
        return LinearCombination(self.terms + extra)


@dataclass
class AdjointState:
    lambdas: dict  # step -> multiplier vector; absent steps are zero
    n_solves: int = 0
    first_step: int = 0
    last_step: int = -1

    def lam(self, n, size):
        v = self.lambdas.get(n)
        return np.zeros(size) if v is None else v


def _coupling(traj: Trajectory):
    B = traj.__dict__.get("_coupling_T")
    if B is None:
        B = coupling_matrix(traj.mesh, traj.options.dt).T.tocsr()
        traj.__dict__["_coupling_T"] = B
    return B


def adjoint_sweep(traj: Trajectory, functional: Functional) -> AdjointState:
    """Backward recursion for the multipliers of ``functional``.

    Only steps ``0..last`` are visited, where ``last`` is the latest step with
    a non-zero state partial; later multipliers vanish identically.
    """
    parts = functional.state_partials(traj)
    n_un = traj.mesh.n_unknowns
    if not parts:
        return AdjointState({}, 0)
    last = max(parts)
    BT = _coupling(traj)
    lambdas = {}
    lam_next = None
    solves = 0
    for n in range(last, -1, -1):
        rhs = np.zeros(n_un)
        if n in parts:
            cols, vals = parts[n]
            np.add.at(rhs, cols, -np.asarray(vals, float))
        if lam_next is not None and n + 1 <= last:
            rhs -= BT @ lam_next
        try:
            lu = traj.factor(n)
        except RuntimeError:
            raise SingularAdjointSystem(n) from None
        lam = lu.solve(rhs, trans="T")
        solves += 1
        if not np.all(np.isfinite(lam)):
            raise SingularAdjointSystem(n)
        lambdas[n] = lam
        lam_next = lam
    traj.stats.linear_solves += solves
    return AdjointState(lambdas, solves, 0, last)


def gradient(traj: Trajectory, functional: Functional, adjoint: AdjointState) -> np.ndarray:
    """Reduced gradient ``dh/du`` (length = number of compressors)."""
    m = traj.mesh
    grad = np.array(functional.control_partials(traj), dtype=float)
    if m.n_comp == 0:
        return grad
    r0 = m.row_comp0 + 3 * np.arange(m.n_comp)
    K, gam = m.comp_K, m.comp_gamma
    active = traj.active
    for n, lam in adjoint.lambdas.items():
        x = traj.states[n]
        k = traj.kappa_eff[n]
        act = active[n]
        # dg/dkappa: ratio row -p_in, consumption row -K m_out gamma kappa^(gamma-1);
        # units switched off for flow reversal solved with a fixed ratio of 1
        d_ratio = -x[m.comp_pin]
        d_cons = -K * x[m.comp_mout] * gam * k ** (gam - 1.0)
        contrib = lam[r0] * d_ratio + lam[r0 + 1] * d_cons
        grad += np.where(act, contrib, 0.0)
    return grad


def functional_gradient(traj, functional):
    return gradient(traj, functional, adjoint_sweep(traj, functional))


def gradients(traj, functionals, max_workers=None):
    """Gradients of several functionals; sweeps are independent and may run in threads."""
    if max_workers and max_workers > 1 and len(functionals) > 1:
        with ThreadPoolExecutor(max_workers) as ex:
            return list(ex.map(lambda f: functional_gradient(traj, f), functionals))
    return [functional_gradient(traj, f) for f in functionals]


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------


@dataclass
class FDReport:
    functional_ids: list
    adjoint: np.ndarray  # (n_functionals, n_comp)
    fd: np.ndarray
    rel_error: np.ndarray
    h: float
    simulations: int = 0
    max_rel_error: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.max_rel_error is None:
            self.max_rel_error = (
                self.rel_error.max(axis=1) if self.rel_error.size else np.zeros(len(self.functional_ids))
            )

    @property
    def worst(self) -> float:
        return float(self.max_rel_error.max()) if len(self.max_rel_error) else 0.0

    def write_csv(self, path, control_ids):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["functional_id", "control_id", "adjoint_grad", "fd_grad", "rel_error"])
            for i, fid in enumerate(self.functional_ids):
                for c, cid in enumerate(control_ids):
                    w.writerow([fid, cid, repr(float(self.adjoint[i, c])), repr(float(self.fd[i, c])),
                                repr(float(self.rel_error[i, c]))])


FD_FLOOR = 1e-8


def relative_errors(adj, fd, floor=0.0):
    """Element-wise ``|a - f| / max(|a|, |f|, floor)``; exact zeros compare as 0."""
    adj, fd = np.asarray(adj, float), np.asarray(fd, float)
    den = np.maximum(np.maximum(np.abs(adj), np.abs(fd)), np.asarray(floor, float))
    out = np.zeros_like(den)
    nz = den > 0
    out[nz] = np.abs(adj - fd)[nz] / den[nz]
    return out


def fd_verify(network, mesh, u, functionals, h=1e-6, options=None, max_workers=None) -> FDReport:
    """Compare adjoint gradients with central differences (2 simulations per control)."""
    from .simulator import SolverOptions

    options = options or SolverOptions()
    u = np.asarray(u, dtype=float)
    nf, nc = len(functionals), len(u)
    ids = [f.id for f in functionals]
    if nc == 0:
        z = np.zeros((nf, 0))
        return FDReport(ids, z, z, z, h, 0)
    base = simulate(network, mesh, u, options)
    adj = np.array(gradients(base, functionals))

    def probe(args):
        c, sign = args
        v = u.copy()
        v[c] += sign * h
        tr = simulate(network, mesh, v, options, retain_factors=False)
        return [f.value(tr) for f in functionals]

    jobs = [(c, s) for c in range(nc) for s in (1.0, -1.0)]
    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers) as ex:
            vals = list(ex.map(probe, jobs))
    else:
        vals = [probe(j) for j in jobs]
    fd = np.zeros((nf, nc))
    for c in range(nc):
        fp, fm = np.array(vals[2 * c]), np.array(vals[2 * c + 1])
        fd[:, c] = (fp - fm) / (2.0 * h)
    # entries below 1e-8 of a functional's own scale (largest partial or value)
    # are compared in absolute terms, so exact zeros do not count as misses
    vals = np.abs([f.value(base) for f in functionals])
    scale = np.maximum.reduce([np.abs(adj).max(axis=1), np.abs(fd).max(axis=1), vals])
    floor = FD_FLOOR * scale[:, None]
    return FDReport(ids, adj, fd, relative_errors(adj, fd, floor), h, 1 + len(jobs))

"""Log-sum-exp aggregation of nodal pressure bounds.

Four schemes decide how pointwise bounds ``p_min <= p_j^n <= p_max`` are
grouped before aggregation:

* ``NL``: no lumping, one constraint per node, step and side;
* ``TL``: per node, lumped over all steps;
* ``SL``: per step, lumped over all monitored nodes;
* ``FL``: one upper and one lower constraint over everything.

Upper constraints read ``smooth_max(p / p_max) <= 1``; lower constraints read
``smooth_min(p / p_min) >= 1``.  Both aggregates are conservative.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .adjoint import Functional
from .errors import EmptyAggregate, InvalidValue


class LumpingScheme(str, enum.Enum):
    NL = "NL"
    TL = "TL"
    SL = "SL"
    FL = "FL"

    @classmethod
    def parse(cls, name) -> "LumpingScheme":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).upper())
        except ValueError:
            raise InvalidValue(f"unknown lumping scheme {name!r}; choose from nl, tl, sl, fl") from None


@dataclass(frozen=True)
class LumpingConfig:
    alpha: float = 0.002
    monitored: Optional[tuple] = None  # node ids; None = all original nodes

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidValue("alpha must be positive")


def smooth_max(values, alpha=0.002) -> float:
    """``alpha * log(sum(exp(v / alpha)))`` evaluated with a max shift."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise EmptyAggregate("smooth_max of an empty set")
    top = v.max()
    return float(top + alpha * np.log(np.exp((v - top) / alpha).sum()))


def smooth_min(values, alpha=0.002) -> float:
    """Conservative smooth minimum, ``-smooth_max(-v)``."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise EmptyAggregate("smooth_min of an empty set")
    return -smooth_max(-v, alpha)


def softmax_weights(values, alpha=0.002) -> np.ndarray:
    """Partials of :func:`smooth_max` w.r.t. each entry; they sum to one."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise EmptyAggregate("softmax of an empty set")
    e = np.exp((v - v.max()) / alpha)
    return e / e.sum()


def softmin_weights(values, alpha=0.002) -> np.ndarray:
    return softmax_weights(-np.asarray(values, dtype=float), alpha)


class PressureConstraint(Functional):
    """Smooth max (upper side) or min (lower side) of scaled nodal pressures.

    ``entries`` is a list of ``(step, node_index)`` pairs.  A single entry
    gives the plain pointwise ratio, which is how unlumped constraints are
    represented.
    """

    def __init__(self, id, entries, side, bounds, pcols, alpha):
        if not entries:
            raise EmptyAggregate(f"constraint {id!r} has no entries")
        self.id = id
        self.side = side
        self.sense = "<=" if side == "upper" else ">="
        self.bound = 1.0
        e = np.asarray(entries, dtype=int).reshape(-1, 2)
        self.steps = e[:, 0]
        self.nodes = e[:, 1]
        self.scale = np.asarray(bounds, float)[self.nodes]
        self.cols = np.asarray(pcols, int)[self.nodes]
        self.alpha = alpha

    def ratios(self, traj) -> np.ndarray:
        return traj.states[self.steps, self.cols] / self.scale

    def value(self, traj) -> float:
        r = self.ratios(traj)
        if len(r) == 1:
            return float(r[0])
        return smooth_max(r, self.alpha) if self.side == "upper" else smooth_min(r, self.alpha)

    def weights(self, traj) -> np.ndarray:
        r = self.ratios(traj)
        if len(r) == 1:
            return np.ones(1)
        return softmax_weights(r, self.alpha) if self.side == "upper" else softmin_weights(r, self.alpha)

    def state_partials(self, traj) -> dict:
        w = self.weights(traj) / self.scale
        out = {}
        for n in np.unique(self.steps):
            sel = self.steps == n
            out[int(n)] = (self.cols[sel], w[sel])
        return out

    def last_step(self, traj) -> int:
        return int(self.steps.max())

    def violation(self, value: float) -> float:
        return max(0.0, value - 1.0) if self.side == "upper" else max(0.0, 1.0 - value)

    def normalized(self, value: float) -> float:
        """Constraint in ``c <= 0`` form."""
        return value - 1.0 if self.side == "upper" else 1.0 - value


def monitored_indices(mesh, config: LumpingConfig) -> np.ndarray:
    ids = mesh.network.node_ids
    if config.monitored is None:
        return np.arange(len(ids))
    idx = []
    for nid in config.monitored:
        if nid not in mesh.node_index:
            raise InvalidValue(f"monitored node {nid!r} does not exist")
        idx.append(mesh.node_index[nid])
    if not idx:
        raise InvalidValue("monitored node set is empty")
    return np.array(idx, dtype=int)


def assemble_constraints(mesh, n_steps: int, scheme, config: LumpingConfig | None = None) -> list:
    """Pressure-bound constraints for ``scheme`` over steps ``1..n_steps``.

    Returns upper-side constraints first, then lower-side ones, each group in
    a deterministic node/step order.
    """
    scheme = LumpingScheme.parse(scheme)
    config = config or LumpingConfig()
    nodes = monitored_indices(mesh, config)
    net = mesh.network
    ids = net.node_ids
    pmax = np.array([n.p_max for n in net.nodes])
    pmin = np.array([n.p_min for n in net.nodes])
    pcols = mesh.original_pcols
    steps = np.arange(1, n_steps + 1)
    if n_steps == 0:
        return []
    a = config.alpha
    out = []
    for side, bounds, tag in (("upper", pmax, "ub"), ("lower", pmin, "lb")):
        def make(cid, entries, side=side, bounds=bounds):
            return PressureConstraint(cid, entries, side, bounds, pcols, a)

        if scheme is LumpingScheme.NL:
            for j in nodes:
                for n in steps:
                    out.append(make(f"{tag}:{ids[j]}@{n}", [(n, j)]))
        elif scheme is LumpingScheme.TL:
            for j in nodes:
                out.append(make(f"{tag}:{ids[j]}", [(n, j) for n in steps]))
        elif scheme is LumpingScheme.SL:
            for n in steps:
                out.append(make(f"{tag}@{n}", [(n, j) for j in nodes]))
        else:
            out.append(make(tag, [(n, j) for n in steps for j in nodes]))
    return out


def constraint_count(scheme, n_nodes: int, n_steps: int) -> int:
    scheme = LumpingScheme.parse(scheme)
    return {
        LumpingScheme.NL: 2 * n_nodes * n_steps,
        LumpingScheme.TL: 2 * n_nodes,
        LumpingScheme.SL: 2 * n_steps,
        LumpingScheme.FL: 2,
    }[scheme]


def adjoint_solve_count(scheme, n_nodes: int, n_steps: int) -> int:
    """Transposed solves needed for all constraint gradients of one evaluation.

    A constraint whose latest entry is step ``n`` needs ``n + 1`` solves
    (steps ``n..1`` plus the steady initial state).
    """
    scheme = LumpingScheme.parse(scheme)
    N = n_steps
    tri = N * (N + 1) // 2 + N  # sum_{n=1}^N (n + 1)
    return {
        LumpingScheme.NL: 2 * n_nodes * tri,
        LumpingScheme.TL: 2 * n_nodes * (N + 1),
        LumpingScheme.SL: 2 * tri,
        LumpingScheme.FL: 2 * (N + 1),
    }[scheme]


def check_pointwise(traj, mesh=None, config: LumpingConfig | None = None):
    """True pointwise min/max pressures over monitored nodes and steps 1..N."""
    config = config or LumpingConfig()
    mesh = mesh or traj.mesh
    nodes = monitored_indices(mesh, config)
    P = traj.node_pressures()[1:, nodes]
    if P.size == 0:
        P = traj.node_pressures()[:, nodes]
    return float(P.min()), float(P.max())


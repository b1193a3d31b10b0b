"""CSV writers for simulated trajectories."""

from __future__ import annotations

import csv

from .simulator import Trajectory

TRAJECTORY_COLUMNS = ["step", "time_s", "node_id", "pressure_pu", "massflow_kgps"]
COMPRESSOR_COLUMNS = ["step", "compressor_id", "kappa_effective", "m_in", "m_out", "m_con"]


def write_trajectory_csv(traj: Trajectory, path, grid_nodes: bool = True):
    """One row per (step, node).

    Original network nodes come first with their net injection (supply minus
    demand, slack included) as the mass-flow column.  With ``grid_nodes`` the
    pipe grid nodes follow, labelled ``pipe:k``, carrying the local mass flow.
    """
    m = traj.mesh
    ids = m.network.node_ids
    P = traj.node_pressures()
    inj = traj.net_injections()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for n, t in enumerate(traj.times):
            x = traj.states[n]
            for j, nid in enumerate(ids):
                w.writerow([n, repr(float(t)), nid, repr(float(P[n, j])), repr(float(inj[n, j]))])
            if grid_nodes:
                for g, label in enumerate(m.grid_labels):
                    w.writerow([n, repr(float(t)), label, repr(float(x[m.grid_pcol[g]])),
                                repr(float(x[m.grid_mcol[g]]))])


def write_compressor_csv(traj: Trajectory, path):
    m = traj.mesh
    m_in, m_out, m_con = traj.compressor_flows()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(COMPRESSOR_COLUMNS)
        for n in range(len(traj.times)):
            for c, comp in enumerate(m.network.compressors):
                w.writerow([n, comp.id, repr(float(traj.kappa_eff[n, c])), repr(float(m_in[n, c])),
                            repr(float(m_out[n, c])), repr(float(m_con[n, c]))])

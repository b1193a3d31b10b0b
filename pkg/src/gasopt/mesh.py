"""Spatial discretisation of a gas network into control volumes.

Every pipe is split into ``n_h`` equal volumes bounded by ``n_h + 1`` grid
nodes.  Each grid node carries a mass-flow unknown; pressures at the pipe
ends are shared by all grid nodes that coincide at the same network node, so
the pressure equality across a junction holds by construction.  Compressors
add three flow unknowns each (inlet, outlet, consumption).

Unknown columns are laid out pipe by pipe (file order), grid nodes left to
right, pressure column first then mass flow; pressures of network nodes that
touch no pipe follow, then the compressor columns.

Residual rows are laid out as: two rows per volume (mass, momentum), one row
per network node (mass balance, or the fixed-pressure row for the slack),
then three rows per compressor (ratio, consumption, mass balance).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidValue
from .network import SLACK, GasNetwork


@dataclass(frozen=True)
class MeshOptions:
    n_h: int = 10

    def __post_init__(self):
        if int(self.n_h) != self.n_h or self.n_h < 1:
            raise InvalidValue("n_h must be a positive integer")


class Mesh:
    """Immutable index map plus per-volume constants for one network."""

    def __init__(self, network: GasNetwork, options: MeshOptions):
        self.network = network
        self.options = options
        n_h = int(options.n_h)
        c2 = network.constants.speed_of_sound ** 2
        P0 = network.constants.pressure_base

        ncol = 0
        node_pcol = {}
        grid_pipe, grid_x, grid_pcol, grid_mcol, grid_label = [], [], [], [], []
        vol_pipe, vol_left, vol_right, vol_dx = [], [], [], []
        pipe_first_grid, pipe_last_grid = [], []
        groups = {n.id: [] for n in network.nodes}

        for e, pipe in enumerate(network.pipes):
            dx = pipe.length / n_h
            first = len(grid_pipe)
            for k in range(n_h + 1):
                g = len(grid_pipe)
                end_node = pipe.from_node if k == 0 else pipe.to_node if k == n_h else None
                if end_node is not None:
                    if end_node not in node_pcol:
                        node_pcol[end_node] = ncol
                        ncol += 1
                    pcol = node_pcol[end_node]
                    groups[end_node].append(g)
                else:
                    pcol = ncol
                    ncol += 1
                mcol = ncol
                ncol += 1
                grid_pipe.append(e)
                # exact endpoint so that the volumes sum to the pipe length
                grid_x.append(pipe.length if k == n_h else k * dx)
                grid_pcol.append(pcol)
                grid_mcol.append(mcol)
                grid_label.append(f"{pipe.id}:{k}")
            pipe_first_grid.append(first)
            pipe_last_grid.append(len(grid_pipe) - 1)
            for k in range(n_h):
                vol_pipe.append(e)
                vol_left.append(first + k)
                vol_right.append(first + k + 1)
                vol_dx.append(grid_x[first + k + 1] - grid_x[first + k])

        for n in network.nodes:
            if n.id not in node_pcol:
                node_pcol[n.id] = ncol
                ncol += 1

        comp_cols = []
        for _ in network.compressors:
            comp_cols.append((ncol, ncol + 1, ncol + 2))  # m_in, m_out, m_con
            ncol += 3

        self.n_h = n_h
        self.n_unknowns = ncol
        self.node_pcol = node_pcol
        self.grid_pipe = np.array(grid_pipe, dtype=int)
        self.grid_x = np.array(grid_x, dtype=float)
        self.grid_pcol = np.array(grid_pcol, dtype=int)
        self.grid_mcol = np.array(grid_mcol, dtype=int)
        self.grid_labels = grid_label
        self.pipe_first_grid = np.array(pipe_first_grid, dtype=int)
        self.pipe_last_grid = np.array(pipe_last_grid, dtype=int)
        self.junction_groups = {nid: tuple(gs) for nid, gs in groups.items() if len(gs) > 1}
        self.node_grid = {nid: tuple(gs) for nid, gs in groups.items()}

        self.vol_pipe = np.array(vol_pipe, dtype=int)
        self.vol_dx = np.array(vol_dx, dtype=float)
        vl = np.array(vol_left, dtype=int)
        vr = np.array(vol_right, dtype=int)
        self.vol_left, self.vol_right = vl, vr
        self.vol_pl = self.grid_pcol[vl] if len(vl) else np.zeros(0, int)
        self.vol_pr = self.grid_pcol[vr] if len(vr) else np.zeros(0, int)
        self.vol_ml = self.grid_mcol[vl] if len(vl) else np.zeros(0, int)
        self.vol_mr = self.grid_mcol[vr] if len(vr) else np.zeros(0, int)

        area = np.array([p.area for p in network.pipes], dtype=float)
        diam = np.array([p.diameter for p in network.pipes], dtype=float)
        fr = np.array([p.friction for p in network.pipes], dtype=float)
        if len(vol_pipe):
            A = area[self.vol_pipe]
            # mass row: P0 dp/dt + c^2/(A dx) dm ; momentum row: dm/dt + A P0/dx dp + fric |m|m/p
            self.vol_area = A
            self.c2_over_Adx = c2 / (A * self.vol_dx)
            self.A_over_dx = A * P0 / self.vol_dx
            self.fric_coef = fr[self.vol_pipe] * c2 / (2.0 * diam[self.vol_pipe] * A * P0)
            # linepack weight per unit p.u. of averaged pressure, kg
            self.vol_linepack = A * self.vol_dx * P0 / c2
        else:
            self.vol_area = self.c2_over_Adx = self.A_over_dx = np.zeros(0)
            self.fric_coef = self.vol_linepack = np.zeros(0)

        self.comp_cols = comp_cols
        self.comp_pin = np.array([node_pcol[c.from_node] for c in network.compressors], dtype=int)
        self.comp_pout = np.array([node_pcol[c.to_node] for c in network.compressors], dtype=int)
        self.comp_min = np.array([c[0] for c in comp_cols], dtype=int)
        self.comp_mout = np.array([c[1] for c in comp_cols], dtype=int)
        self.comp_mcon = np.array([c[2] for c in comp_cols], dtype=int)
        self.comp_K = np.array([c.K for c in network.compressors], dtype=float)
        self.comp_gamma = np.array([c.gamma for c in network.compressors], dtype=float)

        n_vol = len(vol_pipe)
        self.n_volumes = n_vol
        self.n_nodes = len(network.nodes)
        self.n_comp = len(network.compressors)
        self.row_vol_mass = np.arange(n_vol) * 2
        self.row_vol_mom = np.arange(n_vol) * 2 + 1
        self.row_node0 = 2 * n_vol
        self.row_comp0 = 2 * n_vol + self.n_nodes
        self.n_rows = self.row_comp0 + 3 * self.n_comp
        assert self.n_rows == self.n_unknowns

        self.slack_index = next(i for i, n in enumerate(network.nodes) if n.kind == SLACK)
        self.slack_pcol = node_pcol[network.nodes[self.slack_index].id]

        # node incidence: (row offset within node block, column, sign) for outflow - inflow
        inc_node, inc_col, inc_sign = [], [], []
        index = {n.id: i for i, n in enumerate(network.nodes)}
        for e, pipe in enumerate(network.pipes):
            inc_node += [index[pipe.from_node], index[pipe.to_node]]
            inc_col += [grid_mcol[pipe_first_grid[e]], grid_mcol[pipe_last_grid[e]]]
            inc_sign += [1.0, -1.0]
        for c, comp in enumerate(network.compressors):
            inc_node += [index[comp.from_node], index[comp.to_node]]
            inc_col += [comp_cols[c][0], comp_cols[c][1]]
            inc_sign += [1.0, -1.0]
        self.inc_node = np.array(inc_node, dtype=int)
        self.inc_col = np.array(inc_col, dtype=int)
        self.inc_sign = np.array(inc_sign, dtype=float)
        self.node_index = index

        self.original_pcols = np.array([node_pcol[n.id] for n in network.nodes], dtype=int)

    # -- convenience -----------------------------------------------------

    @property
    def n_grid(self) -> int:
        return len(self.grid_pipe)

    def pipe_volumes(self, e: int) -> np.ndarray:
        return np.flatnonzero(self.vol_pipe == e)

    def node_pressures(self, x: np.ndarray) -> np.ndarray:
        """Pressures (p.u.) at the original network nodes, in file order."""
        return np.asarray(x)[..., self.original_pcols]

    def signature(self):
        """Hashable description used to check two trajectories share a mesh."""
        return (
            tuple(self.network.node_ids),
            tuple(p.id for p in self.network.pipes),
            tuple(c.id for c in self.network.compressors),
            self.n_h,
            self.n_unknowns,
        )


def build_mesh(network: GasNetwork, options: MeshOptions | None = None) -> Mesh:
    return Mesh(network, options or MeshOptions())

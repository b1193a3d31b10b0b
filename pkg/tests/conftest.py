import json

import numpy as np
import pytest

from gasopt.bench import shipped_network_path
from gasopt.mesh import MeshOptions, build_mesh
from gasopt.network import load_network, parse_network


def make_network(nodes, pipes=(), compressors=(), profiles=(), constants=None, scaling=None):
    """Build a network from compact tuples.

    nodes: ids (first is the slack) or dicts; pipes: (id, from, to, L, D[, f]);
    compressors: (id, from, to[, K]); profiles: (node, role, base[, shape]).
    """
    nd = []
    for i, n in enumerate(nodes):
        if isinstance(n, dict):
            nd.append(n)
        else:
            nd.append({"id": n, "kind": "slack" if i == 0 else "junction"})
    doc = {
        "nodes": nd,
        "pipes": [
            {"id": p[0], "from": p[1], "to": p[2], "length": p[3], "diameter": p[4],
             "friction": p[5] if len(p) > 5 else 0.01}
            for p in pipes
        ],
        "compressors": [
            dict({"id": c[0], "from": c[1], "to": c[2]}, **({"K": c[3]} if len(c) > 3 else {}))
            for c in compressors
        ],
        "profiles": [
            {"node": p[0], "role": p[1], "base": p[2], "shape": p[3] if len(p) > 3 else "constant"}
            for p in profiles
        ],
    }
    if constants:
        doc["constants"] = constants
    if scaling:
        doc["scaling"] = scaling
    return parse_network(json.dumps(doc))


def shipped(name):
    return load_network(shipped_network_path(name))


@pytest.fixture
def single_pipe():
    return make_network(["S", "D"], [("P1", "S", "D", 50000.0, 0.6)], profiles=[("D", "demand", 40.0)])


@pytest.fixture
def line3():
    return shipped("line3")


@pytest.fixture
def tree10():
    return shipped("tree10")


@pytest.fixture
def pcp_network():
    """pipe - compressor - pipe line with a sinusoidal demand at the far end."""
    return make_network(
        ["S", "A", "B", "D"],
        [("P1", "S", "A", 30000.0, 0.6), ("P2", "B", "D", 40000.0, 0.6)],
        [("C1", "A", "B")],
        [("D", "demand", 50.0, "sinusoidal")],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def mesh_of(net, n_h=10):
    return build_mesh(net, MeshOptions(n_h))


def random_state(mesh, rng, p_range=(0.6, 1.1), m_range=(5.0, 60.0)):
    x = rng.uniform(*m_range, mesh.n_unknowns) * rng.choice([-1.0, 1.0], mesh.n_unknowns)
    x[mesh.grid_pcol] = rng.uniform(*p_range, mesh.n_grid)
    x[mesh.original_pcols] = rng.uniform(*p_range, mesh.n_nodes)
    return x


def jacobian_fd_error(mesh, x, x_prev, kappa, dt=600.0, t=3600.0, horizon=86400.0, h=1e-7):
    """Largest row-wise relative gap between the analytic and central-FD Jacobian."""
    from gasopt.simulator import jacobian, residual

    J = jacobian(mesh, x, x_prev, kappa, dt, t, horizon).toarray()
    F = np.empty_like(J)
    for j in range(len(x)):
        step = h * max(1.0, abs(x[j]))
        e = np.zeros_like(x)
        e[j] = step
        F[:, j] = (residual(mesh, x + e, x_prev, kappa, dt, t, horizon)
                   - residual(mesh, x - e, x_prev, kappa, dt, t, horizon)) / (2 * step)
    return float((np.abs(J - F).max(axis=1) / np.abs(J).max(axis=1)).max())


def two_compressor_line(demand=20.0, length=50000.0, diameter=0.5):
    """S =C1=> A --P1-- B =C2=> C --P2-- D with a constant demand at D."""
    nodes = [{"id": "S", "kind": "slack"}] + [{"id": n, "p_max": 2.0} for n in "ABCD"]
    return make_network(
        nodes,
        [("P1", "A", "B", length, diameter), ("P2", "C", "D", length, diameter)],
        [("C1", "S", "A"), ("C2", "B", "C")],
        [("D", "demand", demand)],
    )


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def record_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])

import json

import numpy as np
import pytest

from gasopt.errors import DegeneratePressure, NoConvergence, SimulationError, StepFailure
from gasopt.mesh import MeshOptions, build_mesh
from gasopt.network import parse_network
from gasopt.simulator import (
    SolverOptions,
    Trajectory,
    continuation_schedule,
    continuation_solve,
    enforce_compressor_flow,
    jacobian,
    mass_balance_errors,
    node_injections,
    objective_cost,
    relative_residual_norm,
    residual,
    rest_state,
    simulate,
    solve_timestep,
    steady_state,
)

from conftest import jacobian_fd_error, make_network, mesh_of, random_state, two_compressor_line

TOL = 1e-10


def no_flow_network(n_comp=1):
    comps = [("C1", "A", "B")] if n_comp else []
    return make_network(["S", "A", "B", "D"], [("P1", "S", "A", 20000.0, 0.5), ("P2", "B", "D", 20000.0, 0.5)],
                        comps)


def constant_pipe(demand=40.0, length=50000.0, diameter=0.6, f=0.01):
    return make_network(["S", "D"], [("P1", "S", "D", length, diameter, f)], profiles=[("D", "demand", demand)])


def weymouth_outlet(net, m_d):
    """p_out (p.u.) from p_in^2 - p_out^2 = f c^2 L m|m| / (D A^2)."""
    p = net.pipes[0]
    c = net.constants
    drop = p.friction * c.speed_of_sound ** 2 * p.length * m_d * abs(m_d) / (p.diameter * p.area ** 2)
    p_in = c.slack_pressure * c.pressure_base
    return np.sqrt(p_in ** 2 - drop) / c.pressure_base


# -- residual / jacobian ----------------------------------------------------


def test_residual_zero_at_rest():
    m = mesh_of(no_flow_network(), 4)
    x = rest_state(m)
    g = residual(m, x, x, [1.0], 600.0, 600.0, 86400.0)
    assert np.all(g == 0.0)


def test_mass_row_without_time_term(single_pipe):
    m = build_mesh(single_pipe, MeshOptions(1))
    x = rest_state(m)
    x[m.grid_mcol] = [30.0, 12.5]
    g = residual(m, x, x, [], 600.0, 0.0, 86400.0)
    p = single_pipe.pipes[0]
    expected = single_pipe.constants.speed_of_sound ** 2 * (12.5 - 30.0) / (p.area * p.length)
    assert g[m.row_vol_mass[0]] == pytest.approx(expected, rel=1e-15)


def test_compressor_rows(pcp_network):
    m = mesh_of(pcp_network, 2)
    x = rest_state(m)
    x[m.comp_mout] = 100.0
    x[m.comp_mcon] = 0.0
    x[m.comp_min] = 110.0
    g = residual(m, x, x, [1.2], 600.0, 0.0, 86400.0)
    r0 = m.row_comp0
    m_con = 0.1 * 100.0 * (1.2 ** 1.2 - 1.0)
    assert -g[r0 + 1] == pytest.approx(m_con, rel=1e-14)
    # the published figure 2.4459 carries a rounding slip; exact value is 2.44562
    assert -g[r0 + 1] == pytest.approx(2.4459, rel=5e-4)
    x[m.comp_mcon] = m_con
    g = residual(m, x, x, [1.2], 600.0, 0.0, 86400.0)
    assert g[r0 + 2] == pytest.approx(110.0 - 100.0 - m_con, rel=1e-14)
    assert g[r0] == pytest.approx(x[m.comp_pout[0]] - 1.2 * x[m.comp_pin[0]], abs=1e-15)
    J = jacobian(m, x, x, [1.2], 600.0, 0.0, 86400.0).toarray()
    assert -J[r0 + 1, m.comp_mout[0]] == pytest.approx(m_con / 100.0, rel=1e-14)


def test_mass_row_flow_derivative(rng, line3):
    m = mesh_of(line3, 3)
    x = random_state(m, rng)
    J = jacobian(m, x, x, [1.1], 600.0, 0.0, 86400.0).toarray()
    for v in range(m.n_volumes):
        assert J[m.row_vol_mass[v], m.vol_mr[v]] == pytest.approx(m.c2_over_Adx[v], rel=1e-15)


def test_jacobian_matches_fd(rng, tree10):
    m = mesh_of(tree10, 2)
    for _ in range(10):
        x, xp = random_state(m, rng), random_state(m, rng)
        k = rng.uniform(1.0, 1.3, m.n_comp)
        assert jacobian_fd_error(m, x, xp, k) <= 1e-6


def test_sparsity_constant(rng, line3):
    m = mesh_of(line3, 3)
    a = jacobian(m, random_state(m, rng), random_state(m, rng), [1.1], 600.0, 0.0, 86400.0)
    b = jacobian(m, random_state(m, rng), random_state(m, rng), [1.2], 60.0, 60.0, 86400.0)
    assert np.array_equal(a.indices, b.indices) and np.array_equal(a.indptr, b.indptr)


def test_degenerate_pressure(single_pipe):
    m = mesh_of(single_pipe, 2)
    x = rest_state(m)
    x[m.grid_pcol] = 0.0
    with pytest.raises(DegeneratePressure):
        residual(m, x, x, [], 600.0, 0.0, 86400.0)


# -- single steps -----------------------------------------------------------


def test_zero_demand_fixed_point():
    m = mesh_of(no_flow_network(), 4)
    x0 = rest_state(m)
    x, it, norm = solve_timestep(m, x0, [1.0], 600.0, 600.0, SolverOptions())
    assert it <= 1 and np.allclose(x, x0, atol=1e-14)


def test_weymouth_steady_profile():
    net = constant_pipe(40.0)
    m = mesh_of(net, 10)
    x, _, _ = steady_state(m, [], SolverOptions())
    assert np.allclose(x[m.grid_mcol], 40.0, rtol=1e-10)
    assert x[m.node_pcol["D"]] == pytest.approx(weymouth_outlet(net, 40.0), rel=1e-9)


def test_transient_settles_to_weymouth():
    net = constant_pipe(40.0)
    m = mesh_of(net, 10)
    opts = SolverOptions(dt=3600.0, horizon=50 * 3600.0)
    x = rest_state(m)
    inj = node_injections(m, 0.0, opts.horizon)
    for n in range(50):
        x, _, _ = solve_timestep(m, x, [], opts.dt, 0.0, opts, injections=inj)
    assert x[m.node_pcol["D"]] == pytest.approx(weymouth_outlet(net, 40.0), rel=1e-6)


def test_demand_beyond_capacity_fails():
    net = constant_pipe(40.0)
    m = mesh_of(net, 10)
    opts = SolverOptions()
    x0, _, _ = steady_state(m, [], opts)
    inj = np.array([0.0, -5000.0])
    with pytest.raises((NoConvergence, DegeneratePressure)):
        solve_timestep(m, x0, [], 600.0, 600.0, opts, injections=inj)


def test_continuation_noop_at_unit_ratio(pcp_network):
    m = mesh_of(pcp_network, 4)
    opts = SolverOptions()
    x0, _, _ = steady_state(m, [1.0], opts)
    a = solve_timestep(m, x0, [1.0], 600.0, 600.0, opts)[0]
    b = continuation_solve(m, x0, [1.0], 600.0, 600.0, opts)[0]
    assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_single_stage_is_direct(pcp_network):
    m = mesh_of(pcp_network, 4)
    opts = SolverOptions(cont_stages=1)
    x0, _, _ = steady_state(m, [1.1], opts)
    a = solve_timestep(m, x0, [1.15], 600.0, 600.0, opts)
    b = continuation_solve(m, x0, [1.15], 600.0, 600.0, opts)
    assert np.array_equal(a[0], b[0]) and a[1] == b[1]


def test_schedule():
    opts = SolverOptions(cont_eps=0.01, cont_stages=5)
    sched = continuation_schedule([1.2, 1.0], opts)
    assert len(sched) == 5
    assert np.allclose(sched[0], [1.01, 1.0]) and np.allclose(sched[-1], [1.2, 1.0])


def test_cold_start_paths_agree():
    net = two_compressor_line(20.0)
    m = mesh_of(net, 10)
    opts = SolverOptions(dt=600.0)
    x0 = rest_state(m)
    a, _, na = solve_timestep(m, x0, [1.2, 1.2], 600.0, 0.0, opts)
    b, _, nb = continuation_solve(m, x0, [1.2, 1.2], 600.0, 0.0, opts)
    assert na <= TOL and nb <= TOL
    assert np.abs(a - b).max() / np.abs(a).max() <= 1e-8


# -- flow reversal ----------------------------------------------------------


def reversal_network():
    # the supply at G can only reach the slack through C1, against its direction
    return make_network(["S", "A", "B", "G"],
                        [("P1", "S", "A", 20000.0, 0.6), ("P2", "B", "G", 20000.0, 0.6)],
                        [("C1", "A", "B")], [("G", "supply", 30.0)])


def test_forced_reversal_switches_off():
    net = reversal_network()
    m = mesh_of(net, 4)
    opts = SolverOptions(dt=3600.0, horizon=3 * 3600.0)
    traj = simulate(net, m, [1.2], opts)
    assert np.all(traj.kappa_eff == 1.0)
    assert not traj.active.any()
    _, m_out, m_con = traj.compressor_flows()
    assert np.allclose(m_con, 0.0)
    assert np.all(traj.residual_norms <= TOL)


def test_no_reversal_is_noop(pcp_network):
    m = mesh_of(pcp_network, 4)
    x, _, _ = steady_state(m, [1.1], SolverOptions())
    calls = []
    y, k, off = enforce_compressor_flow(m, x, [1.1], lambda kk: calls.append(kk))
    assert y is x and not calls and not off.any() and k[0] == 1.1


def test_unit_ratio_never_triggers(pcp_network):
    m = mesh_of(pcp_network, 4)
    traj = simulate(pcp_network, m, [1.0], SolverOptions(dt=3600.0, horizon=6 * 3600.0))
    assert np.all(traj.active) and objective_cost(traj) == 0.0


# -- steady state and trajectories ------------------------------------------


def test_steady_zero_demand():
    net = make_network(["S", "A", "D"], [("P1", "S", "A", 20000.0, 0.5), ("P2", "A", "D", 20000.0, 0.5)])
    m = mesh_of(net, 3)
    x, _, _ = steady_state(m, [], SolverOptions())
    assert np.allclose(x[m.grid_pcol], 1.0, atol=1e-14) and np.allclose(x[m.grid_mcol], 0.0, atol=1e-12)


def test_steady_then_step_unchanged(pcp_network):
    net = make_network(["S", "A", "B", "D"],
                       [("P1", "S", "A", 30000.0, 0.6), ("P2", "B", "D", 40000.0, 0.6)],
                       [("C1", "A", "B")], [("D", "demand", 50.0)])
    m = mesh_of(net, 6)
    opts = SolverOptions()
    x0, k, _ = steady_state(m, [1.1], opts)
    x1, _, norm = solve_timestep(m, x0, k, 600.0, 600.0, opts)
    assert norm <= TOL
    assert np.abs(x1 - x0).max() <= 1e-8 * np.abs(x0).max()


def test_constant_boundary_trajectory():
    net = constant_pipe(40.0)
    m = mesh_of(net, 5)
    traj = simulate(net, m, [], SolverOptions(dt=1800.0, horizon=86400.0))
    drift = np.abs(traj.states - traj.states[0]).max(axis=1) / np.abs(traj.states[0]).max()
    assert drift.max() <= 1e-8


def test_mass_balance_sinusoidal_pipe():
    net = make_network(["S", "D"], [("P1", "S", "D", 50000.0, 0.6)], profiles=[("D", "demand", 40.0, "sinusoidal")])
    m = mesh_of(net, 8)
    traj = simulate(net, m, [], SolverOptions(dt=600.0, horizon=86400.0))
    assert mass_balance_errors(traj).max() <= 1e-8


def test_mass_balance_with_compressor(pcp_network):
    m = mesh_of(pcp_network, 6)
    traj = simulate(pcp_network, m, [1.15], SolverOptions(dt=900.0, horizon=86400.0))
    assert mass_balance_errors(traj).max() <= 1e-8
    assert np.all(traj.residual_norms <= TOL)


def test_empty_horizon(pcp_network):
    m = mesh_of(pcp_network, 3)
    traj = simulate(pcp_network, m, [1.1], SolverOptions(horizon=0.0))
    assert traj.n_steps == 0 and traj.states.shape == (1, m.n_unknowns)
    assert objective_cost(traj) == 0.0


def test_step_failure_reports_step():
    doc = {
        "nodes": [{"id": "S", "kind": "slack"}, {"id": "D"}],
        "pipes": [{"id": "P", "from": "S", "to": "D", "length": 50000, "diameter": 0.6, "friction": 0.01}],
        "profiles": [{"node": "D", "role": "demand", "base": 40, "shape": "tabulated",
                      "samples": [[0, 1], [1200, 1], [1800, 200], [3600, 200]]}],
    }
    net = parse_network(json.dumps(doc))
    with pytest.raises(StepFailure) as ei:
        simulate(net, mesh_of(net, 4), [], SolverOptions(dt=600.0, horizon=3600.0))
    assert ei.value.step >= 3 and isinstance(ei.value.cause, SimulationError)


# -- objective --------------------------------------------------------------


def synthetic_trajectory(net, m_out, dt, N):
    m = mesh_of(net, 1)
    opts = SolverOptions(dt=dt, horizon=dt * N)
    X = np.tile(rest_state(m), (N + 1, 1))
    k = np.array([1.2])
    X[:, m.comp_mout] = m_out
    X[:, m.comp_mcon] = 0.1 * m_out * (1.2 ** 1.2 - 1.0)
    z = np.zeros(N + 1)
    return Trajectory(m, k, opts, X, np.arange(N + 1) * dt, np.tile(k, (N + 1, 1)),
                      np.zeros((N + 1, m.n_nodes)), z, z.astype(int))


def test_objective_example(pcp_network):
    traj = synthetic_trajectory(pcp_network, 100.0, 600.0, 144)
    assert objective_cost(traj) == pytest.approx(0.1 * 100 * (1.2 ** 1.2 - 1) * 86400, rel=1e-12)
    assert objective_cost(traj) == pytest.approx(211327.0, rel=3e-4)


def test_objective_riemann_identity(pcp_network):
    a = objective_cost(synthetic_trajectory(pcp_network, 100.0, 600.0, 144))
    b = objective_cost(synthetic_trajectory(pcp_network, 100.0, 1200.0, 72))
    assert a == pytest.approx(b, rel=1e-13)


def test_objective_zero_at_unit_ratio(line3):
    m = mesh_of(line3, 3)
    traj = simulate(line3, m, [1.0], SolverOptions(dt=3600.0))
    assert objective_cost(traj) == 0.0


def test_stored_states_converged(line3):
    m = mesh_of(line3, 4)
    opts = SolverOptions(dt=3600.0)
    traj = simulate(line3, m, [1.03], opts)
    for n in range(1, traj.n_steps + 1):
        norm = relative_residual_norm(m, traj.states[n], traj.states[n - 1], traj.kappa_eff[n], opts.dt,
                                      traj.times[n], injections=traj.injections[n])
        assert norm <= TOL

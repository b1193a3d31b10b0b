import csv
import json

import numpy as np
import pytest

from gasopt.bench import (
    BenchCase,
    add_error_fields,
    diff_solutions,
    replay_objective,
    run_convergence_study,
    run_scheme_matrix,
    shipped_case,
)
from gasopt.errors import ConfigError, MeshMismatch
from gasopt.simulator import SolverOptions, simulate

from conftest import mesh_of, shipped


@pytest.fixture(scope="module")
def small_report():
    case = shipped_case("line3", n_h=4)
    report = run_scheme_matrix(case)
    return add_error_fields(report)


def test_four_rows(small_report):
    assert [r.scheme for r in small_report.schemes] == ["NL", "TL", "SL", "FL"]
    assert all(r.status == "converged" for r in small_report.schemes)


def test_nl_sl_coincide_on_three_nodes(small_report):
    nl, sl = small_report.row("NL").J, small_report.row("SL").J
    assert abs(nl - sl) / nl <= 1e-3


def test_replay(small_report):
    for r in small_report.schemes:
        assert replay_objective(small_report.case, r.kappa) == r.J


def test_error_fields_reasonable(small_report):
    tl = [v for a, b, _, _, v in small_report.edge_errors if a == "TL"]
    assert tl and max(abs(v) for v in tl) < 10.0  # a few percent at most
    assert all(b == "NL" for _, b, *_ in small_report.edge_errors)


def test_write_report(tmp_path, small_report):
    files = {p.name for p in small_report.write(tmp_path)}
    assert {"schemes.csv", "edge_errors.csv", "node_errors.csv", "summary.json"} <= files
    rows = list(csv.DictReader(open(tmp_path / "schemes.csv")))
    assert len(rows) == 4 and float(rows[0]["J"]) == small_report.row("NL").J
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["case"]["network"] == "line3"


def test_deterministic_apart_from_timing(small_report):
    again = run_scheme_matrix(shipped_case("line3", n_h=4, schemes=("FL",)))
    a = small_report.row("FL")
    b = again.row("FL")
    assert (a.J, a.kappa, a.iterations, a.min_pressure) == (b.J, b.kappa, b.iterations, b.min_pressure)


@pytest.fixture(scope="module")
def two_trajs():
    net = shipped("line3")
    m = mesh_of(net, 3)
    opts = SolverOptions(dt=3600.0)
    return simulate(net, m, [1.02], opts), simulate(net, m, [1.05], opts)


def test_diff_self_is_zero(two_trajs):
    e, n = diff_solutions(two_trajs[0], two_trajs[0])
    assert np.all(e == 0) and np.all(n == 0)


def test_diff_antisymmetric(two_trajs):
    a, b = two_trajs
    e1, n1 = diff_solutions(a, b)
    e2, n2 = diff_solutions(b, a)
    assert np.array_equal(e1, -e2) and np.array_equal(n1, -n2)
    assert np.abs(n1).max() > 0


def test_diff_mesh_mismatch(two_trajs):
    net = shipped("line3")
    other = simulate(net, mesh_of(net, 4), [1.02], SolverOptions(dt=3600.0))
    with pytest.raises(MeshMismatch):
        diff_solutions(two_trajs[0], other)


def test_convergence_self_reference():
    case = shipped_case("line3", kappa=(1.05,))
    rows = run_convergence_study(case, [4], ref_n_h=4, ref_dt=3600.0)
    assert rows[0].rel_objective_error == 0.0 and rows[0].rel_min_pressure_error == 0.0


def test_case_config_errors():
    with pytest.raises(ConfigError):
        BenchCase.from_dict({"network": "line3", "bogus": 1})
    with pytest.raises(ConfigError):
        BenchCase.from_dict({"network": "line3", "schemes": ["XL"]})
    with pytest.raises(ConfigError):
        shipped_case("nope")


def test_scaling_applied():
    base = shipped_case("line3").load()
    scaled = shipped_case("line3", demand_scaling=0.5).load()
    assert scaled.profiles[0].L0 == pytest.approx(0.5 * base.profiles[0].base)

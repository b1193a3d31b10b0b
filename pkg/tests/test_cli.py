import csv
import json

import pytest

from gasopt.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_IO, EXIT_OK, main
from gasopt.network import serialize_network

from conftest import make_network

FAST = ["--nh", "3", "--dt", "3600"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    last = out.strip().splitlines()[-1] if out.strip() else None
    return code, (json.loads(last) if last else None), err


def write_net(tmp_path, net, name="net.json"):
    p = tmp_path / name
    p.write_text(serialize_network(net))
    return str(p)


def read_csv(path):
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_simulate_zero_demand_constant(tmp_path, capsys):
    net = make_network(["S", "A", "D"], [("P1", "S", "A", 20000.0, 0.5), ("P2", "A", "D", 20000.0, 0.5)])
    code, summary, _ = run(capsys, "simulate", "--network", write_net(tmp_path, net), "--out", str(tmp_path / "o"),
                           *FAST)
    assert code == EXIT_OK
    rows = read_csv(tmp_path / "o" / "trajectory.csv")
    assert {float(r["pressure_pu"]) for r in rows} == {1.0}
    assert {float(r["massflow_kgps"]) for r in rows} == {0.0}
    assert summary["J"] == 0.0


def test_simulate_mass_balance_lines(tmp_path, capsys):
    code, summary, _ = run(capsys, "simulate", "--network", "line3", "--kappa", "1.05", "--out", str(tmp_path), *FAST)
    assert code == EXIT_OK
    mb = read_csv(tmp_path / "mass_balance.csv")
    assert len(mb) == 24 and max(float(r["rel_error"]) for r in mb) <= 1e-8
    comp = read_csv(tmp_path / "compressors.csv")
    assert list(comp[0]) == ["step", "compressor_id", "kappa_effective", "m_in", "m_out", "m_con"]


def test_missing_network_io_error(tmp_path, capsys):
    out = tmp_path / "never"
    code, _, err = run(capsys, "simulate", "--network", str(tmp_path / "missing.json"), "--out", str(out))
    assert code == EXIT_IO and not out.exists()
    assert json.loads(err.strip().splitlines()[-1])["error"] == "io"


def test_steady(tmp_path, capsys):
    code, summary, _ = run(capsys, "steady", "--network", "line3", "--out", str(tmp_path), *FAST)
    assert code == EXIT_OK and summary["residual"] <= 1e-10
    assert (tmp_path / "steady.csv").exists()


def test_check_grad_pass_and_threshold_zero(tmp_path, capsys):
    code, summary, _ = run(capsys, "check-grad", "--network", "line3", "--out", str(tmp_path), "--horizon", "21600",
                           *FAST)
    assert code == EXIT_OK and summary["passed"]
    code, summary, _ = run(capsys, "check-grad", "--network", "line3", "--out", str(tmp_path / "z"),
                           "--threshold", "0", "--horizon", "21600", *FAST)
    assert code == EXIT_FAIL and not summary["passed"]
    rows = read_csv(tmp_path / "z" / "gradient_report.csv")
    assert rows and list(rows[0]) == ["functional_id", "control_id", "adjoint_grad", "fd_grad", "rel_error"]


def test_check_grad_no_compressors(tmp_path, capsys, caplog, single_pipe):
    code, summary, _ = run(capsys, "check-grad", "--network", write_net(tmp_path, single_pipe),
                           "--out", str(tmp_path), *FAST)
    assert code == EXIT_OK and summary["vacuous"]


def test_optimize_trivial(tmp_path, capsys):
    net = make_network(["S", "A", "B", "D"], [("P1", "S", "A", 20000.0, 0.6), ("P2", "B", "D", 30000.0, 0.6)],
                       [("C1", "A", "B")], [("D", "demand", 10.0, "sinusoidal")])
    code, summary, _ = run(capsys, "optimize", "--network", write_net(tmp_path, net), "--out", str(tmp_path), *FAST)
    assert code == EXIT_OK and summary["J"] == 0.0 and summary["kappa"] == {"C1": 1.0}


def test_optimize_infeasible(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"network": "line3", "p_min": 1.0, "max_outer": 4, "n_h": 3, "dt": 3600}))
    code, _, err = run(capsys, "optimize", "--config", str(cfg), "--out", str(tmp_path))
    assert code == EXIT_FAIL
    assert json.loads(err.strip().splitlines()[-1])["error"] == "iteration_limit"
    assert not (tmp_path / "solution.json").exists()


def test_optimize_then_replay(tmp_path, capsys):
    code, summary, _ = run(capsys, "optimize", "--network", "line3", "--scheme", "nl", "--out", str(tmp_path), *FAST)
    assert code == EXIT_OK
    sol = json.loads((tmp_path / "solution.json").read_text())
    assert sol["settings"]["scheme"] == "NL"
    code, rep, _ = run(capsys, "simulate", "--network", "line3", "--solution", str(tmp_path / "solution.json"),
                       "--out", str(tmp_path / "replay"), *FAST)
    assert code == EXIT_OK
    assert abs(rep["min_pressure"] - sol["min_pressure"]) <= 1e-10
    assert abs(rep["max_pressure"] - sol["max_pressure"]) <= 1e-10
    assert rep["J"] == sol["J"]
    its = read_csv(tmp_path / "iterations.csv")
    assert len(its) == sol["iterations"]


def test_bench_rows_and_convergence(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"network": "line3", "n_h": 3, "n_h_list": [2, 4], "ref_n_h": 6, "ref_dt": 3600,
                               "kappa": [1.05]}))
    code, summary, _ = run(capsys, "bench", "--config", str(cfg), "--convergence", "--out", str(tmp_path))
    assert code == EXIT_OK and len(summary["rows"]) == 4
    assert len(read_csv(tmp_path / "schemes.csv")) == 4
    conv = read_csv(tmp_path / "convergence.csv")
    assert [int(r["n_h"]) for r in conv] == [2, 4]


def test_unknown_scheme_in_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"network": "line3", "schemes": ["NL", "XL"]}))
    code, _, err = run(capsys, "bench", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert code == EXIT_CONFIG and not (tmp_path / "o").exists()
    assert json.loads(err.strip().splitlines()[-1])["error"] == "config"


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"network": "line3", "colour": "blue"}))
    code, _, _ = run(capsys, "simulate", "--config", str(cfg), "--out", str(tmp_path))
    assert code == EXIT_CONFIG


def test_bad_scheme_flag_rejected(capsys):
    with pytest.raises(SystemExit) as ei:
        main(["optimize", "--network", "line3", "--scheme", "xl"])
    assert ei.value.code != 0


def test_deterministic_outputs(tmp_path, capsys):
    for d in ("a", "b"):
        assert run(capsys, "simulate", "--network", "tree10", "--out", str(tmp_path / d), *FAST)[0] == EXIT_OK
    for f in ("trajectory.csv", "compressors.csv", "mass_balance.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

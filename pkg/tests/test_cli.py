import csv
import io
import json
import math

import pytest

from selfsustain import avail_distribution, ModelParams
from selfsustain import cli
from selfsustain.cli import SWEEP_COLUMNS, main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def sustain_json(capsys, *argv):
    code, out, _ = run(capsys, "sustain", "--format", "json", *argv)
    assert code == 0
    return json.loads(out)


def test_sustain_single_block(capsys):
    r = sustain_json(capsys, "--blocks", "1", "--lambda", "0.15", "--mu", "0.15", "--gamma", "mu")
    assert abs(r["A"] - (1 - math.exp(-1))) <= r["trunc_error"]
    assert r["A_closed"] == pytest.approx(1 - math.exp(-1), abs=1e-15)
    slack = r["trunc_error"]
    assert r["bonferroni_lower"] - slack <= r["A"] <= r["bonferroni_upper"] + slack


def test_sustain_zero_load_and_popular(capsys):
    assert sustain_json(capsys, "--blocks", "16", "--lambda", "0", "--mu", "0.15")["A"] == 0.0
    r = sustain_json(capsys, "--blocks", "16", "--lambda-per-min", "8", "--mu", "0.15", "--gamma", "inf")
    assert r["A"] >= 0.9
    assert r["lambda_per_s"] == pytest.approx(8 / 60)


def test_sustain_adds_no_arithmetic(capsys):
    r = sustain_json(capsys, "--blocks", "12", "--lambda", "0.1", "--mu", "0.15", "--gamma", "mu")
    d = avail_distribution(ModelParams(12, 0.1, 0.15, "mu"))
    assert r["A"] == d.A and r["N"] == d.N and r["trunc_error"] == d.trunc_error
    assert r == cli.sustain_report(12, 0.1, 0.15, "mu")


def test_sustain_text_and_file_output(capsys, tmp_path):
    code, out, _ = run(capsys, "sustain", "--blocks", "4", "--lambda", "0.1", "--mu", "0.2")
    assert code == 0 and out.splitlines()[0].startswith("B ")
    target = tmp_path / "r.json"
    code, out, _ = run(capsys, "sustain", "--blocks", "4", "--lambda", "0.1", "--mu", "0.2", "--format", "json", "-o", str(target))
    assert code == 0 and out == ""
    assert json.loads(target.read_text())["B"] == 4


@pytest.mark.parametrize(
    "argv",
    [
        ["sustain", "--blocks", "0", "--lambda", "1", "--mu", "1"],
        ["sustain", "--blocks", "4", "--lambda", "1", "--lambda-per-min", "2", "--mu", "1"],
        ["sustain", "--blocks", "4", "--lambda", "1", "--mu", "-1"],
        ["sustain", "--blocks", "4", "--lambda", "1", "--mu", "1", "--gamma", "soon"],
        ["sweep", "--blocks", "4,x", "--lambda", "1", "--mu", "1"],
        ["frobnicate"],
    ],
)
def test_usage_errors_exit_2(capsys, argv):
    assert run(capsys, *argv)[0] == 2


def test_precision_capability_exit_3(capsys):
    code, _, err = run(capsys, "minload", "--blocks", "1", "--target", "0.9")
    assert code == 3 and "not supported" in err


def sweep_csv(capsys, *argv):
    code, out, err = run(capsys, "sweep", *argv)
    return code, list(csv.DictReader(io.StringIO(out))), out


def test_sweep_header_and_single_cell(capsys):
    code, rows, out = sweep_csv(capsys, "--blocks", "16", "--lambda-per-min", "4", "--mu", "0.15")
    assert code == 0
    assert out.splitlines()[0] == "B,lambda_per_s,mu,gamma,rho,N,A,trunc_error"
    report = cli.sustain_report(16, 4 / 60, 0.15, "inf")
    assert len(rows) == 1
    for c in SWEEP_COLUMNS:
        assert rows[0][c] == cli._fmt(report[c])


def test_sweep_monotone_and_ordered(capsys):
    lams = "0.25,0.5,1,2,4,8"
    code, rows, _ = sweep_csv(capsys, "--blocks", "16,50,100,200", "--lambda-per-min", lams, "--mu", "0.15")
    assert code == 0
    assert [int(r["B"]) for r in rows] == [B for B in (16, 50, 100, 200) for _ in range(6)]
    A = [[float(r["A"]) for r in rows[i * 6 : (i + 1) * 6]] for i in range(4)]
    err = [[float(r["trunc_error"]) for r in rows[i * 6 : (i + 1) * 6]] for i in range(4)]
    # nondecreasing up to the truncation error of the two cells compared
    for a, e in zip(A, err):
        assert all(a[j + 1] >= a[j] - e[j] - e[j + 1] for j in range(5))
    # fixed per-stage load: rho constant across B
    for j in range(6):
        assert all(A[i + 1][j] >= A[i][j] - err[i][j] - err[i + 1][j] for i in range(3))


def test_sweep_is_byte_identical_and_parallel_agrees(capsys, monkeypatch):
    argv = ["--blocks", "8,16", "--lambda", "0.05,0.1", "--mu", "0.15", "--gamma", "mu"]
    _, _, a = sweep_csv(capsys, *argv)
    _, _, b = sweep_csv(capsys, *argv)
    _, _, c = sweep_csv(capsys, *argv, "--jobs", "2")
    assert a == b == c
    code, out, _ = run(capsys, "sweep", *argv, "--format", "json")
    assert code == 0 and [list(r) for r in json.loads(out)] == [list(SWEEP_COLUMNS)] * 4


def test_sweep_failed_cells_emit_nan(capsys):
    code, out, err = run(capsys, "sweep", "--blocks", "16", "--lambda", "0.1,1e7", "--mu", "0.15")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 1
    assert float(rows[0]["A"]) > 0 and rows[1]["A"] == "nan"
    assert "1 of 2 cells failed" in err


def test_jobs_environment_variable(capsys, monkeypatch):
    monkeypatch.setenv(cli.JOBS_ENV, "3")
    assert cli.build_parser(cli._default_jobs()).parse_args(["sweep", "--blocks", "4", "--lambda", "1", "--mu", "1"]).jobs == 3
    monkeypatch.setenv(cli.JOBS_ENV, "zero")
    assert run(capsys, "sustain", "--blocks", "4", "--lambda", "1", "--mu", "1")[0] == 2


def minload_json(capsys, *argv):
    code, out, _ = run(capsys, "minload", "--format", "json", *argv)
    assert code == 0
    return json.loads(out)


def test_minload_examples(capsys):
    assert minload_json(capsys, "--blocks", "16", "--target", "0.9")["rho"] == pytest.approx(0.6767, abs=5e-5)
    assert minload_json(capsys, "--blocks", "10", "--target", "0.999", "--mode", "exact")["coverage"] == pytest.approx(20, rel=0.15)
    r = minload_json(capsys, "--blocks", "1000", "--target", "0.999", "--mode", "exact")
    assert r["coverage"] == pytest.approx(29, rel=0.15)
    assert r["achieved"] == pytest.approx(0.999, abs=1e-6)
    for bad in ("1.0", "0", "-0.5"):
        assert run(capsys, "minload", "--blocks", "16", "--target", bad)[0] == 2


def write_config(path, **extra):
    cfg = {"n_blocks": 6, "arrival_rate": 0.05, "horizon_seconds": 500}
    cfg.update(extra)
    path.write_text(json.dumps(cfg))
    return str(path)


def test_simulate_deterministic(capsys, tmp_path):
    cfg = write_config(tmp_path / "c.json")
    code, a, _ = run(capsys, "simulate", cfg, "-r", "2", "--seed", "7")
    _, b, _ = run(capsys, "simulate", cfg, "-r", "2", "--seed", "7")
    assert code == 0 and a == b
    rows = list(csv.DictReader(io.StringIO(a)))
    assert [r["replication"] for r in rows] == ["1", "2", "pooled"]
    _, c, _ = run(capsys, "simulate", cfg, "-r", "2", "--seed", "8")
    assert c != a


def test_simulate_zero_arrivals(capsys, tmp_path):
    cfg = write_config(tmp_path / "c.json", arrival_rate=0.0)
    code, out, _ = run(capsys, "simulate", cfg, "--format", "json")
    assert code == 0
    pooled = json.loads(out)[-1]
    assert pooled["self_sustainability"] == 0.0 and pooled["mean_peers"] == 0.0


def test_simulate_errors(capsys, tmp_path):
    assert run(capsys, "simulate", str(tmp_path / "absent.json"))[0] == 2
    assert run(capsys, "simulate", write_config(tmp_path / "u.json", colour="red"))[0] == 2
    assert run(capsys, "simulate", write_config(tmp_path / "v.json", n_blocks=0))[0] == 2
    cfg = write_config(tmp_path / "c.json")
    assert run(capsys, "simulate", cfg, "--seed", "-1")[0] == 2
    code, _, err = run(capsys, "simulate", cfg, "-o", str(tmp_path / "missing" / "out.csv"))
    assert code == 4 and "missing" in err

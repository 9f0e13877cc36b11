import csv
import io
import json

import pytest

from wlanfair import cli
from wlanfair.cli import CSV_COLUMNS, SWEEP_COLUMN, main
from wlanfair.scenario import load_scenario


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def parse(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_analyze_table(capsys):
    code, out, _ = run_cli(capsys, "analyze", "scenario_a")
    assert code == 0
    assert "aggregate_bps" in out and "t_av_us" in out
    assert "scenario_a" in out


def test_analyze_csv_schema(capsys):
    code, out, _ = run_cli(capsys, "analyze", "scenario_a", "--format", "csv")
    assert code == 0
    assert out.splitlines()[0] == ",".join(CSV_COLUMNS)
    rows = parse(out)
    assert [r["station_id"] for r in rows] == ["1", "2", "3"]
    assert {r["source"] for r in rows} == {"analytic"}
    assert float(rows[0]["aggregate_bps"]) == pytest.approx(1.89e6, rel=0.15)


def test_printed_numbers_match_library(capsys):
    sc = load_scenario("scenario_a")
    report = cli.cmd_analyze(sc)
    rows = parse(report.to_csv())
    for r, lib in zip(rows, report.rows):
        assert r["throughput_bps"] == "%.6g" % lib["throughput_bps"]


def test_malformed_scenario_exits_2_without_output(capsys, tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"stations": [{"id": "1", "lambda": 3}]}))
    code, out, err = run_cli(capsys, "analyze", str(p), "--format", "csv")
    assert code == 2
    assert out == ""
    assert "stations[0]" in err


def test_missing_file_exits_2(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "analyze", str(tmp_path / "nope.json"))
    assert code == 2 and out == ""


def test_zero_duration_rejected(capsys):
    code, out, err = run_cli(capsys, "simulate", "scenario_a", "--duration-s", "0")
    assert code == 2 and out == ""
    assert "duration" in err


def test_solver_failure_exits_3(capsys, tmp_path):
    p = tmp_path / "idle.json"
    p.write_text(json.dumps({"stations": [
        {"id": "a", "lambda_pkt_s": 0, "rate_bps": 11e6, "payload_bytes": 1028},
        {"id": "b", "lambda_pkt_s": 100, "rate_bps": 1e6, "payload_bytes": 1028}]}))
    code, out, _ = run_cli(capsys, "optimize", str(p), "--criterion", "lpf")
    assert code == 3 and out == ""


def test_optimize_writes_derived_scenario(capsys, tmp_path):
    derived = tmp_path / "tuned.json"
    code, out, _ = run_cli(capsys, "optimize", "scenario_a", "--criterion", "mlpf",
                           "--format", "csv", "--write-scenario", str(derived))
    assert code == 0
    rows = parse(out)
    tuned = load_scenario(derived)
    assert [s.cw_min for s in tuned.stations] == [int(r["w0"]) for r in rows]


def test_pf_on_homogeneous_network_gives_equal_windows(capsys, tmp_path):
    p = tmp_path / "homog.json"
    st = {"lambda_pkt_s": 2000, "rate_bps": 11e6, "payload_bytes": 1028}
    p.write_text(json.dumps({"stations": [dict(st, id=str(i)) for i in range(3)]}))
    code, out, _ = run_cli(capsys, "optimize", str(p), "--criterion", "pf", "--format", "csv")
    assert code == 0
    assert len({r["w0"] for r in parse(out)}) == 1


def test_simulate_csv_is_byte_stable(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        assert main(["simulate", "scenario_a", "--runs", "1", "--seed", "9",
                     "--duration-s", "2", "--format", "csv", "--out", str(path)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert {r["source"] for r in parse(a.read_text())} == {"sim"}


def test_simulate_with_trace_and_criterion(capsys, tmp_path):
    trace = tmp_path / "trace.csv"
    code, out, _ = run_cli(capsys, "simulate", "scenario_a", "--runs", "2", "--duration-s", "1",
                           "--criterion", "mlpf", "--trace", str(trace), "--format", "csv")
    assert code == 0
    assert trace.read_text().count("TX_OK") > 0
    assert [r["criterion"] for r in parse(out)] == ["mlpf"] * 3


def test_sweep_grid_and_columns(capsys):
    code, out, _ = run_cli(capsys, "sweep", "fig2", "--steps", "3", "--modes", "dcf,mlpf",
                           "--format", "csv")
    assert code == 0
    header = out.splitlines()[0].split(",")
    assert header[0] == SWEEP_COLUMN and tuple(header[1:]) == CSV_COLUMNS
    rows = parse(out)
    lams = sorted({float(r[SWEEP_COLUMN]) for r in rows})
    assert lams == pytest.approx([10, 181.659, 500, 3300], rel=1e-4)
    # default sweep station is the slowest one
    assert {r["lambda_pkt_s"] for r in rows if r["station_id"] == "1"} == {"500"}
    assert len(rows) == len(lams) * 2 * 3


def test_sweep_rejects_unknown_station_and_mode(capsys):
    assert run_cli(capsys, "sweep", "fig2", "--station", "9")[0] == 2
    assert run_cli(capsys, "sweep", "fig2", "--modes", "dcf,fastest")[0] == 2


def test_sweep_parallel_matches_serial():
    sc = load_scenario("fig2")
    serial = cli.cmd_sweep(sc, steps=3, modes=("dcf",), jobs=1).to_csv()
    parallel = cli.cmd_sweep(sc, steps=3, modes=("dcf",), jobs=2).to_csv()
    assert serial == parallel


def test_report_lists_every_criterion(capsys):
    code, out, _ = run_cli(capsys, "report", "scenario_a", "--format", "csv")
    assert code == 0
    assert [r["criterion"] for r in parse(out)][::3] == ["dcf", "pf", "lpf", "mlpf"]


def test_lambda_grid():
    assert cli.lambda_grid(1, 100, 3) == [1, 10, 100]
    assert cli.lambda_grid(0.5, 2.5, 3, "linear", include=[2.0, 9.0]) == [0.5, 1.5, 2.0, 2.5]
    with pytest.raises(cli.UsageError):
        cli.lambda_grid(0, 10, 3)

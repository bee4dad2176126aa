import json

import pytest

from agewatch.cli import main
from agewatch.engine import run
from agewatch.heap import dump_snapshot
from agewatch.trend import write_indicator_csv
from agewatch.utils import format_duration, format_percent, markdown_table

from conftest import GOOD_CONTAINERS, SMALL_SPEC, TOTAL_CONTAINERS, make_record, make_snapshot


@pytest.fixture(autouse=True)
def no_config_from_env(monkeypatch, tmp_path):
    monkeypatch.delenv("AGEWATCH_CONFIG", raising=False)
    monkeypatch.chdir(tmp_path)


def test_format_duration_zero():
    assert format_duration(0.0) == "00:00:00.000"


def test_format_duration_of_detector_spans():
    assert format_duration(600.0) == "00:10:00.000"
    assert format_duration(890.25) == "00:14:50.250"
    assert format_duration(21600.0) == "06:00:00.000"
    assert format_duration(0.0004) == "00:00:00.000"
    assert format_duration(90000.0) == "25:00:00.000"


def test_format_percent():
    assert format_percent(42.6) == "+43%"
    assert format_percent(-2.8) == "-3%"
    assert format_percent(float("inf")) == "+inf"
    assert format_percent(float("nan")) == "n/a"


def test_markdown_table():
    table = markdown_table(("a", "b"), [(1, "x"), (2, "y")])
    assert table == "| a | b |\n|---|---|\n| 1 | x |\n| 2 | y |\n"


def write_growing_snapshots(directory, count):
    paths = []
    for index in range(count):
        elements = [make_record(1000 + k, "com.example.Item", 100, created=0.0) for k in range(index + 1)]
        objects = [
            make_record(1, "com.example.Service", 64, refs=[10, 11]),
            make_record(10, "java.util.ArrayList", 40, refs=[e.id for e in elements]),
            make_record(11, "java.util.HashMap", 40),
            *elements,
        ]
        snapshot = make_snapshot(objects, [1], index * 3600.0, f"s{index}")
        paths.append(dump_snapshot(snapshot, directory / f"snapshot_{index}.json"))
    return paths


def test_analyze_writes_report(tmp_path, capsys):
    write_growing_snapshots(tmp_path / "snaps", 3)
    out = tmp_path / "out"
    assert main(["analyze", "--snapshots", str(tmp_path / "snaps"), "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "Analysed 2 containers of system_server; 1 to rejuvenate" in stdout
    assert "java.util.ArrayList@10" in stdout
    for name in ("report.csv", "report.json", "rejuvenation_list.json"):
        assert (out / name).exists()
    listed = json.loads((out / "rejuvenation_list.json").read_text(encoding="utf-8"))
    assert listed["process"] == "system_server"


def test_analyze_with_two_snapshots_is_an_input_error(tmp_path, capsys):
    paths = write_growing_snapshots(tmp_path / "snaps", 2)
    code = main(["analyze", "--snapshots", *map(str, paths), "--out", str(tmp_path / "out")])
    assert code == 2
    assert "at least 3 snapshots" in capsys.readouterr().err


def test_analyze_malformed_snapshot(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    assert main(["analyze", "--snapshots", str(bad), str(bad), str(bad), "--out", str(tmp_path / "o")]) == 2
    assert str(bad) in capsys.readouterr().err


def test_analyze_large_synthetic_heap(tmp_path, capsys, aging_series):
    for index, snapshot in enumerate(aging_series):
        dump_snapshot(snapshot, tmp_path / "snaps" / f"snapshot_{index}.json")
    assert main(["analyze", "--snapshots", str(tmp_path / "snaps"), "--out", str(tmp_path / "out")]) == 0
    stdout = capsys.readouterr().out
    assert f"Analysed {TOTAL_CONTAINERS} containers of system_server; {GOOD_CONTAINERS} to rejuvenate" in stdout
    listed = json.loads((tmp_path / "out" / "rejuvenation_list.json").read_text(encoding="utf-8"))
    assert len(listed["containers"]) == GOOD_CONTAINERS


def write_csv(path, rows):
    path.write_text("timestamp_s,indicator,value\n" + "".join(f"{t},{n},{v}\n" for t, n, v in rows), encoding="utf-8")
    return path


def test_detect_rejects_malformed_csv(tmp_path, capsys):
    path = write_csv(tmp_path / "bad.csv", [(0, "free_mem", 1), (10, "free_mem", "lots")])
    assert main(["detect", "--indicators", str(path), "--out", str(tmp_path / "out")]) == 2
    assert f"{path}:3:" in capsys.readouterr().err


def test_detect_flat_series(tmp_path, capsys):
    path = write_csv(tmp_path / "flat.csv", [(10 * i, "launch_time:a", 120.0) for i in range(200)])
    assert main(["detect", "--indicators", str(path), "--out", str(tmp_path / "out")]) == 0
    assert capsys.readouterr().out.strip() == "no aging detected"
    status = json.loads((tmp_path / "out" / "status.json").read_text(encoding="utf-8"))
    assert status["alerts"] == [] and status["alarm"] is None


def test_detect_single_row(tmp_path, capsys):
    path = write_csv(tmp_path / "one.csv", [(0, "launch_time:a", 120.0)])
    assert main(["detect", "--indicators", str(path), "--out", str(tmp_path / "out")]) == 0
    assert "no aging detected" in capsys.readouterr().out


def test_detect_on_simulated_indicators(tmp_path, capsys, small_spec):
    trace = run(small_spec, small_spec.experiment("EXP1"))
    path = write_indicator_csv(tmp_path / "indicators.csv", trace.indicators)
    assert main(["--fixed-clock", "detect", "--indicators", str(path), "--out", str(tmp_path / "out")]) == 0
    stdout = capsys.readouterr().out
    assert "alert launch_time:" in stdout
    assert "alert pss:system_server" in stdout
    assert "alarm: confidence very_high, TTAF" in stdout
    assert "decision:" in stdout
    events = [json.loads(line) for line in (tmp_path / "out" / "events.jsonl").read_text(encoding="utf-8").splitlines()]
    assert [event["event"] for event in events].count("alarm") == 1


def test_simulate_unknown_service(tmp_path, capsys):
    spec = tmp_path / "bad.toml"
    spec.write_text(SMALL_SPEC.replace('rejuvenated_services = ["activity_manager"]', 'rejuvenated_services = ["bluetooth"]'), encoding="utf-8")
    assert main(["simulate", "--spec", str(spec), "--out", str(tmp_path / "out")]) == 2
    assert "bluetooth" in capsys.readouterr().err


def test_simulate_is_reproducible(tmp_path, capsys, small_spec_path):
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        argv = ["--fixed-clock", "simulate", "--spec", str(small_spec_path), "--seed", "1", "--no-plots", "--out", str(out)]
        assert main(argv) == 0
        outputs.append(out)
    stdout = capsys.readouterr().out
    assert "EXP2: 2 rejuvenations, 0 reboots" in stdout
    assert "EXP3: 0 rejuvenations, 2 reboots" in stdout
    assert "EXP2: mean Gain_LT" in stdout
    first, second = outputs
    for relative in ("comparison.csv", "comparison.md", "EXP1/indicators.csv", "EXP2/events.jsonl", "EXP3/metadata.json"):
        assert (first / relative).read_bytes() == (second / relative).read_bytes(), relative
    meta = json.loads((first / "EXP2" / "metadata.json").read_text(encoding="utf-8"))
    assert meta["status"] == "completed"
    assert meta["seed"] == 1
    assert len(list((first / "EXP1" / "snapshots").glob("snapshot_*.json"))) == 3


def test_simulate_writes_plots(tmp_path, small_spec_path):
    pytest.importorskip("matplotlib")
    out = tmp_path / "out"
    assert main(["simulate", "--spec", str(small_spec_path), "--experiment", "EXP1", "--experiment", "EXP2", "--out", str(out)]) == 0
    assert (out / "lt_over_time.png").stat().st_size > 0
    assert (out / "ttaf_bars.png").stat().st_size > 0


def test_report_on_finished_runs(tmp_path, capsys, small_spec_path):
    runs = tmp_path / "runs"
    assert main(["--fixed-clock", "simulate", "--spec", str(small_spec_path), "--no-plots", "--out", str(runs)]) == 0
    capsys.readouterr()
    out = tmp_path / "report"
    assert main(["report", "--runs", str(runs), "--out", str(out), "--no-plots"]) == 0
    stdout = capsys.readouterr().out
    assert "EXP2: mean Gain_LT" in stdout
    assert (out / "comparison.csv").exists()

    assert main(["report", "--runs", str(runs), "--baseline", "EXP9", "--no-plots", "--out", str(out)]) == 2
    assert "EXP9" in capsys.readouterr().err
    assert main(["report", "--runs", str(tmp_path / "empty"), "--no-plots"]) == 2


def test_argparse_errors_exit_with_usage_code():
    with pytest.raises(SystemExit) as excinfo:
        main(["detect"])
    assert excinfo.value.code == 2


def test_detect_reports_cleared_alert_without_alarm(tmp_path, capsys):
    rows = []
    for i in range(451):
        t = 10.0 * i
        rows.append((t, "launch_time:a", 100.0 + 0.5 * min(t, 1500.0)))
        rows.append((t, "pss:system_server", 6e7 + 1000.0 * max(0.0, t - 3000.0)))
    path = write_csv(tmp_path / "apart.csv", rows)
    assert main(["--fixed-clock", "detect", "--indicators", str(path), "--out", str(tmp_path / "out")]) == 0
    stdout = capsys.readouterr().out
    assert "alert launch_time:a" in stdout and ", cleared" in stdout
    assert "no alarm: alerts do not satisfy any alarm rule" in stdout
    status = json.loads((tmp_path / "out" / "status.json").read_text(encoding="utf-8"))
    assert [alert["indicator"] for alert in status["alerts"]] == ["pss:system_server"]
    assert [alert["indicator"] for alert in status["raised"]] == ["launch_time:a", "pss:system_server"]
    assert status["alarm"] is None and status["decision"] is None
    events = [json.loads(line) for line in (tmp_path / "out" / "events.jsonl").read_text(encoding="utf-8").splitlines()]
    assert [event["event"] for event in events] == ["alert", "alert"]


def test_simulate_warns_about_config_sections_it_ignores(tmp_path, capsys, small_spec_path):
    config = tmp_path / "tool.toml"
    config.write_text("[detector]\nwindow = 50\n\n[metrics]\nalpha = 0.05\n", encoding="utf-8")
    argv = ["simulate", "--config", str(config), "--spec", str(small_spec_path), "--experiment", "EXP1", "--no-plots", "--out", str(tmp_path / "out")]
    assert main(argv) == 0
    stderr = capsys.readouterr().err
    assert "Ignoring config sections detector: simulated runs" in stderr

"""Exit codes and artifact emission of the command-line interface."""

import copy

import pytest
import yaml

from amplan import cli

from test_harness import EMPTY, write_scenario


@pytest.fixture()
def empty_yaml(tmp_path):
    return write_scenario(tmp_path, EMPTY)


def test_plan_writes_artifacts(empty_yaml, tmp_path, capsys):
    out = tmp_path / "out"
    rc = cli.main(["plan", "--scenario", empty_yaml, "--mode", "sq",
                   "--out", str(out)])
    assert rc == 0
    assert (out / "trajectory.csv").exists()
    assert (out / "metrics.txt").exists()
    assert "amplan metrics v1" in capsys.readouterr().out


def test_simulate_and_metrics_roundtrip(empty_yaml, tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["simulate", "--scenario", empty_yaml,
                     "--out", str(out)]) == 0
    first = capsys.readouterr().out
    assert (out / "telemetry.csv").exists()
    assert cli.main(["metrics", "--scenario", empty_yaml,
                     "--out", str(out)]) == 0
    second = capsys.readouterr().out
    for a, b in zip(first.splitlines()[1:], second.splitlines()[1:]):
        ka, _, va = a.partition(" ")
        kb, _, vb = b.partition(" ")
        assert ka == kb
        if va and va not in ("nan",):
            assert float(va) == pytest.approx(float(vb), rel=1e-12, abs=1e-12)


def test_bench_table(empty_yaml, capsys):
    assert cli.main(["bench", "--scenario", empty_yaml]) == 0
    out = capsys.readouterr().out
    lines = [ln for ln in out.splitlines() if ln.strip()]
    assert lines[0].startswith("scenario")
    assert len(lines) == 3            # header + sq + ellipse rows
    assert "empty" in lines[1]


def test_missing_file_exit_2(capsys):
    assert cli.main(["plan", "--scenario", "/does/not/exist.yaml"]) == 2


def test_invalid_scenario_exit_2(tmp_path, capsys):
    data = copy.deepcopy(EMPTY)
    del data["goal"]
    path = write_scenario(tmp_path, data)
    assert cli.main(["plan", "--scenario", path]) == 2


def test_bad_arguments_exit_2(empty_yaml, capsys):
    assert cli.main(["plan", "--scenario", empty_yaml, "--mode", "oval"]) == 2
    assert cli.main(["frobnicate"]) == 2


def test_bad_dt_exit_2(empty_yaml, capsys):
    assert cli.main(["plan", "--scenario", empty_yaml, "--dt", "-0.1"]) == 2


def test_corrupt_metrics_exit_3(empty_yaml, tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["plan", "--scenario", empty_yaml, "--out", str(out)]) == 0
    capsys.readouterr()
    (out / "metrics.txt").write_text("garbage\n")
    assert cli.main(["metrics", "--scenario", empty_yaml,
                     "--out", str(out)]) == 3

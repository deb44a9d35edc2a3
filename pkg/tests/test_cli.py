from __future__ import annotations

import json

import pytest

from statuslink.cli import main, parse_seeds, worker_count
from statuslink.sim.config import ConfigError

TINY = ["--platoons", "1", "--vehicles", "3", "--duration", "2000", "--warmup", "200"]


def test_run_writes_outputs_and_config_round_trips(tmp_path, capsys):
    out = tmp_path / "a"
    assert main(["run", *TINY, "--mode", "status_unaware:20", "--out", str(out)]) == 0
    assert "status_unaware:20" in capsys.readouterr().out
    for name in ("config.txt", "metrics.json", "trajectories.csv", "packets.csv", "aoi.csv",
                 "m_trace.csv"):
        assert (out / name).exists(), name
    again = tmp_path / "b"
    assert main(["run", "--config", str(out / "config.txt"), "--out", str(again)]) == 0
    assert (out / "metrics.json").read_bytes() == (again / "metrics.json").read_bytes()
    doc = json.loads((out / "metrics.json").read_text())
    assert doc["config"]["update_interval"] == 20 and "min_safe_distance" in doc["metrics"]


def test_flags_override_config_file(tmp_path):
    (tmp_path / "c.txt").write_text("platoons=1\nvehicles=3\nduration=2000\nwarmup=200\n")
    out = tmp_path / "o"
    assert main(["run", "--config", str(tmp_path / "c.txt"), "--seed", "5",
                 "--out", str(out)]) == 0
    assert "seed=5" in (out / "config.txt").read_text().splitlines()


def test_sweep_and_compare(tmp_path, capsys):
    assert main(["sweep", *TINY, "--mode", "status_unaware", "--param", "update_interval",
                 "--from", "10", "--to", "30", "--step", "20", "--seeds", "2",
                 "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(rows) == 3 and rows[1].startswith("10,2,")
    assert main(["compare", *TINY, "--modes", "parallel,status_unaware:40", "--seeds", "1",
                 "--out", str(tmp_path)]) == 0
    text = (tmp_path / "compare.csv").read_text()
    assert "parallel," in text and "status_unaware:40," in text


def test_solve_mdp(tmp_path, capsys):
    assert main(["solve-mdp", "--bins", "3", "--p-up", "0.5", "--m", "0.5",
                 "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "mdp_solution.json").read_text())
    assert doc["bellman_residual"] < 1e-6 and len(doc["policy"]) == 3
    assert main(["solve-mdp", "--cost0", "[0, 1]", "--cost1", "[0, 1]",
                 "--p0", "[[0.5, 0.5], [0.5, 0.5]]", "--p1", "[[1, 0], [1, 0]]"]) == 0


@pytest.mark.parametrize("argv", [
    ["run", "--mode", "warp"],
    ["run", "--platoons", "0"],
    ["run", "--threshold", "abc"],
    ["sweep", "--param", "mode", "--from", "0", "--to", "1", "--step", "1"],
    ["sweep", "--param", "threshold", "--from", "0", "--to", "1", "--step", "0"],
    ["compare", "--modes", ","],
    ["solve-mdp", "--cost0", "[0, 1]"],
    ["solve-mdp", "--cost0", "[[", "--cost1", "[0]", "--p0", "[[1]]", "--p1", "[[1]]"],
])
def test_config_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_config_file_exits_3(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "none.txt")]) == 3


def test_non_convergence_exits_1(capsys):
    assert main(["solve-mdp", "--bins", "30", "--p-up", "0.01", "--m", "1",
                 "--max-sweeps", "2"]) == 1


def test_parse_seeds_and_workers(monkeypatch):
    assert parse_seeds("3") == [0, 1, 2]
    assert parse_seeds("3", base=5) == [5, 6, 7]
    assert parse_seeds("2-4") == [2, 3, 4]
    assert parse_seeds("1,9") == [1, 9]
    with pytest.raises(ConfigError):
        parse_seeds("x")
    monkeypatch.setenv("STATUSLINK_THREADS", "1")
    assert worker_count(10) == 1
    monkeypatch.setenv("STATUSLINK_THREADS", "many")
    with pytest.raises(ConfigError):
        worker_count(10)

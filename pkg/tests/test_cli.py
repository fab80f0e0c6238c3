"""CLI subcommands, exit codes, and end-to-end CSV output."""

import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from ubusampler.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, main
from ubusampler.harness import CSV_COLUMNS, SCHEMA_VERSION, read_csv
from ubusampler.observables import load_reference

QUAD_REF = {"method": "quadrature", "tol": 1e-10}


def write_config(tmp_path, name="cfg.json", **over):
    doc = {"model": "bench1d", "algorithm": "sg:2.0", "h_grid": [0.4, 0.2],
           "total_time": 50.0, "replicas": 4, "seed": 7,
           "reference": QUAD_REF}
    doc.update(over)
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


# ---------------------------------------------------------------------------
# bias-sweep
# ---------------------------------------------------------------------------


def test_bias_sweep_end_to_end(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "bias.csv"
    assert main(["bias-sweep", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    rows = read_csv(out)
    assert [r["statistic"] for r in rows] == ["bias", "bias", "slope"]
    assert all(int(r["schema_version"]) == SCHEMA_VERSION for r in rows)
    assert list(rows[0]) == CSV_COLUMNS
    assert "wrote 3 rows" in capsys.readouterr().out


def test_seed_override_changes_seed_column(tmp_path):
    cfg = write_config(tmp_path)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["bias-sweep", "--config", str(cfg), "--out", str(a)]) == EXIT_OK
    assert main(["bias-sweep", "--config", str(cfg), "--out", str(b),
                 "--seed", "99"]) == EXIT_OK
    assert {r["seed"] for r in read_csv(a)} == {"7"}
    assert {r["seed"] for r in read_csv(b)} == {"99"}
    assert read_csv(a)[0]["value"] != read_csv(b)[0]["value"]


def test_workers_flag_does_not_change_output(tmp_path):
    cfg = write_config(tmp_path)
    a, b = tmp_path / "w1.csv", tmp_path / "w4.csv"
    assert main(["bias-sweep", "--config", str(cfg), "--out", str(a)]) == EXIT_OK
    assert main(["bias-sweep", "--config", str(cfg), "--out", str(b),
                 "--workers", "4"]) == EXIT_OK
    for ra, rb in zip(read_csv(a), read_csv(b)):
        ra.pop("wall_time"), rb.pop("wall_time")
        assert ra == rb


def test_out_path_from_config(tmp_path):
    out = tmp_path / "from_config.csv"
    cfg = write_config(tmp_path, out=str(out))
    assert main(["bias-sweep", "--config", str(cfg)]) == EXIT_OK
    assert out.exists()


# ---------------------------------------------------------------------------
# exit codes
# ---------------------------------------------------------------------------


def test_unknown_config_key_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, stepsize=0.1)
    assert main(["bias-sweep", "--config", str(cfg),
                 "--out", str(tmp_path / "x.csv")]) == EXIT_CONFIG
    assert "stepsize" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path, capsys):
    assert main(["bias-sweep", "--config", str(tmp_path / "absent.json"),
                 "--out", str(tmp_path / "x.csv")]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_invalid_json_exits_2(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{broken")
    assert main(["bias-sweep", "--config", str(cfg),
                 "--out", str(tmp_path / "x.csv")]) == EXIT_CONFIG


def test_missing_out_path_exits_2(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["bias-sweep", "--config", str(cfg)]) == EXIT_CONFIG


@pytest.mark.filterwarnings("ignore:.*diverged.*")
def test_divergence_dominated_exits_3(tmp_path):
    # a step size far above stability blows up every replica
    cfg = write_config(tmp_path, algorithm="full", h_grid=[80.0],
                       total_time=8000.0)
    out = tmp_path / "div.csv"
    assert main(["bias-sweep", "--config", str(cfg), "--out", str(out)]) \
        == EXIT_DIVERGED
    rows = read_csv(out)
    assert int(rows[0]["diverged"]) == 4
    assert int(rows[0]["replicas"]) == 0


# ---------------------------------------------------------------------------
# compare / ratio
# ---------------------------------------------------------------------------


def test_compare_end_to_end(tmp_path):
    doc = {"model": "bench1d-fs:4", "algorithms": ["full", "minibatch:2"],
           "h_grid": [0.4, 0.2], "total_time": 50.0, "replicas": 4,
           "seed": 3, "reference": QUAD_REF}
    cfg = tmp_path / "cmp.json"
    cfg.write_text(json.dumps(doc))
    out = tmp_path / "cmp.csv"
    assert main(["compare", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    rows = read_csv(out)
    assert len(rows) == 4
    assert {r["algorithm"] for r in rows} == {"full", "minibatch:2"}
    assert all(r["statistic"] == "error" for r in rows)


def test_compare_requires_algorithms_key(tmp_path):
    cfg = write_config(tmp_path)  # has "algorithm", not "algorithms"
    assert main(["compare", "--config", str(cfg),
                 "--out", str(tmp_path / "x.csv")]) == EXIT_CONFIG


def test_ratio_end_to_end(tmp_path):
    doc = {"model": "bench1d-fs:4", "p_list": [2], "h_grid": [0.4, 0.2],
           "total_time": 50.0, "replicas": 4, "seed": 5,
           "reference": QUAD_REF}
    cfg = tmp_path / "ratio.json"
    cfg.write_text(json.dumps(doc))
    out = tmp_path / "ratio.csv"
    assert main(["ratio", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    rows = read_csv(out)
    stats = [r["statistic"] for r in rows]
    assert stats.count("error") == 4
    assert 0 <= stats.count("ratio") <= 2


def test_ratio_missing_key_exits_2(tmp_path):
    cfg = tmp_path / "ratio.json"
    cfg.write_text(json.dumps({"model": "bench1d-fs:4"}))
    assert main(["ratio", "--config", str(cfg),
                 "--out", str(tmp_path / "x.csv")]) == EXIT_CONFIG


# ---------------------------------------------------------------------------
# coefficient / select / reference
# ---------------------------------------------------------------------------


def test_coefficient_writes_csv_and_sidecar(tmp_path):
    cfg = write_config(tmp_path, algorithm="sg:1.0",
                       coefficient_replicas=8)
    out = tmp_path / "coeff.csv"
    assert main(["coefficient", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    rows = read_csv(out)
    assert [r["statistic"] for r in rows] == ["coefficient", "predicted_bias",
                                              "predicted_bias"]
    meta = json.loads((tmp_path / "coeff.csv.meta.json").read_text())
    assert meta["model"] == "bench1d"
    assert meta["coefficient"] == float(rows[0]["value"])
    assert meta["replicas"] == 8


def test_select_prints_json(tmp_path, capsys):
    out = tmp_path / "sel.json"
    assert main(["select", "--epsilon", "0.01", "--dim", "10",
                 "--components", "100", "--batch", "4",
                 "--out", str(out)]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc == json.loads(out.read_text())
    assert doc["choice"] in ("svrg", "minibatch")
    assert doc["total_time"] == pytest.approx(1e5)
    assert doc["svrg_window"][0] == pytest.approx(4 / math.sqrt(10 * 1e5))
    assert doc["svrg_window"][1] == pytest.approx(0.04)
    assert doc["steps"] == math.ceil(doc["total_time"] / doc["h"])


def test_reference_subcommand_round_trips(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "ref.txt"
    assert main(["reference", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    ref = load_reference(out)
    assert abs(ref.value[0] - 0.6371325625864197) < 1e-10


def test_console_script_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "ubusampler.cli", "select", "--epsilon", "0.1",
         "--dim", "2", "--components", "10", "--batch", "1"],
        capture_output=True, text=True, timeout=300)
    assert proc.returncode == EXIT_OK
    doc = json.loads(proc.stdout)
    assert set(doc) == {"h", "total_time", "steps", "choice", "svrg_window"}

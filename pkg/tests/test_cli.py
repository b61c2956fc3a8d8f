import csv
import io
import json
import time

import pytest

from lfperf import cli
from lfperf.core import params_to_dict


@pytest.fixture
def cfg_a(tmp_path, platform, workload):
    path = tmp_path / "cfga.json"
    path.write_text(json.dumps(params_to_dict(platform, workload)))
    return str(path)


GRID = "1:100:3:log"


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_parse_grid():
    g = cli.parse_grid("0.1:1000:5:log")
    assert g[0] == pytest.approx(0.1) and g[-1] == pytest.approx(1000) and len(g) == 5
    assert list(cli.parse_grid("0:10:3:lin")) == [0, 5, 10]
    for bad in ("1:2", "a:b:3", "0:10:3:log", "5:1:3", "1:2:3:cubic"):
        with pytest.raises(cli.ValidationError):
            cli.parse_grid(bad)


@pytest.mark.parametrize("model", ["avg", "markov", "multistage"])
def test_predict(cfg_a, tmp_path, model):
    out = tmp_path / "p.csv"
    assert cli.main(["predict", "--model", model, "--params", cfg_a, "--pw-grid", GRID, "--out", str(out)]) == 0
    rows = read_csv(out)
    assert len(rows) == 3
    assert list(rows[0]) == ["pw", "throughput", "fails", "trl", "mode"]


def test_predict_multistage_stages_file(cfg_a, tmp_path):
    stages = tmp_path / "s.json"
    stages.write_text(json.dumps({"stages": [{"rc": 1, "cw": 2, "cc": 1.5, "var": "tail"},
                                             {"rc": 1, "cw": 1, "cc": 1.5, "var": "next"}]}))
    out = tmp_path / "p.csv"
    assert cli.main(["predict", "--model", "multistage", "--params", cfg_a, "--stages", str(stages),
                     "--pw-grid", GRID, "--out", str(out)]) == 0
    assert len(read_csv(out)) == 3


def test_simulate(cfg_a, tmp_path):
    out = tmp_path / "s.csv"
    assert cli.main(["simulate", "--params", cfg_a, "--pw-grid", GRID, "--successes", "2000",
                     "--out", str(out)]) == 0
    rows = read_csv(out)
    assert list(rows[0]) == cli.SIM_COLUMNS
    assert len(rows) == 3


def test_seed_env_override(cfg_a, tmp_path, monkeypatch):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    monkeypatch.setenv("LFPERF_SEED", "77")
    assert cli.main(["simulate", "--params", cfg_a, "--seed", "1", "--successes", "1000", "--out", str(a)]) == 0
    assert cli.main(["simulate", "--params", cfg_a, "--seed", "2", "--successes", "1000", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert read_csv(a)[0]["seed"] == "77"


def test_sweep(cfg_a, tmp_path):
    out, summary = tmp_path / "w.csv", tmp_path / "w.json"
    t0 = time.time()
    assert cli.main(["sweep", "--model", "markov", "--params", cfg_a, "--pw-grid", GRID,
                     "--successes", "2000", "--out", str(out), "--summary", str(summary)]) == 0
    assert time.time() - t0 < 60
    rows = read_csv(out)
    assert "rel_error" in rows[0] and len(rows) == 3
    assert json.loads(summary.read_text())["rows"] == 3


def test_advise(cfg_a, tmp_path):
    out = tmp_path / "a.json"
    assert cli.main(["advise", "--params", cfg_a, "--backoff", "--mm", "--quantum", "1",
                     "--k-max", "60", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert set(rep) >= {"pw_star", "backoff_uow", "backoff_cycles", "mm_k", "flags"}
    assert isinstance(rep["flags"], list)


def test_advise_window(cfg_a, tmp_path):
    out = tmp_path / "a.json"
    assert cli.main(["advise", "--params", cfg_a, "--fails-window", "3,2,4", "--out", str(out)]) == 0
    assert "adaptive_backoff_uow" in json.loads(out.read_text())


def test_bench_or_unavailable(tmp_path):
    out = tmp_path / "b.csv"
    code = cli.main(["bench", "--structure", "counter", "--threads", "1", "--duration", "0.1", "--out", str(out)])
    assert code in (0, cli.EXIT_UNAVAILABLE)
    if code == 0:
        row = read_csv(out)[0]
        assert row["source"] == "hardware" and row["fails_per_success"] == "0"


def test_calibrate_or_unavailable(tmp_path):
    out = tmp_path / "c.json"
    code = cli.main(["calibrate", "--out", str(out)])
    assert code in (0, cli.EXIT_UNAVAILABLE)
    if code == 0:
        assert "platform" in json.loads(out.read_text())


def test_unknown_flag():
    assert cli.main(["predict", "--bogus"]) == 64
    assert cli.main(["frobnicate"]) == 64


def test_malformed_params(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"platform": {"P": 8}, "workload": {"cw_mean": "lots", "pw_mean": 1}}))
    assert cli.main(["simulate", "--params", str(bad)]) == 2
    assert "cw_mean" in capsys.readouterr().err


def test_validation_error_exit(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"platform": {"P": 8, "cc_uow": 1.0, "rc_uow": 1.5},
                               "workload": {"cw_mean": 1, "pw_mean": 1}}))
    assert cli.main(["predict", "--params", str(bad)]) == 2
    assert "cc" in capsys.readouterr().err


def test_markov_scope_error(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"platform": {"P": 8}, "workload": {"cw_mean": 1, "pw_mean": 1,
                                                                "pw_dist": "constant"}}))
    assert cli.main(["predict", "--model", "markov", "--params", str(p)]) == 2


def test_convergence_exit(cfg_a, monkeypatch):
    from lfperf import avg

    def boom(*a, **k):
        raise cli.ConvergenceError("fixed point not reached", 1.0)
    monkeypatch.setattr(avg, "predict_avg", boom)
    assert cli.main(["predict", "--params", cfg_a]) == 3


def test_unwritable_destination(cfg_a):
    assert cli.main(["predict", "--params", cfg_a, "--out", "/nonexistent-dir/x.csv"]) == 74


def test_json_format(cfg_a, tmp_path):
    out = tmp_path / "p.json"
    assert cli.main(["predict", "--params", cfg_a, "--pw-grid", GRID, "--format", "json", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert len(data) == 3 and set(data[0]) == {"pw", "throughput", "fails", "trl", "mode"}

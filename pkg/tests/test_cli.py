import json
import os

import pytest

from nudge3d.cli import main
from nudge3d.io import ObservationRecord, RunManifest

SMALL = ["--set", "grid.n=16", "--set", "solver.dt=0.05", "--set", "solver.t_end=0.5",
         "--set", "init.amplitude=0.5", "--deterministic"]


def last_json(text):
    start = text.index("{")
    return json.loads(text[start:])


def test_interp_check_volume(capsys):
    assert main(["interp-check", "--kind", "volume", "--h", "L/8", "--n", "16",
                 "--samples", "100"]) == 0
    out = last_json(capsys.readouterr().out)
    assert out["kind"] == "volume"
    assert out["c1"] > 0 and out["c2"] > 0 and out["c3"] is None


def test_missing_config_exits_2(tmp_path, capsys):
    code = main(["simulate", "--config", str(tmp_path / "nope.cfg"), "--out-dir", str(tmp_path)])
    assert code == 2
    assert "not found" in capsys.readouterr().err


def test_unknown_key_exits_2(tmp_path):
    assert main(["simulate", "--set", "bogus.key=1", "--out-dir", str(tmp_path)]) == 2


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as info:
        main(["simulate", "--no-such-flag"])
    assert info.value.code == 2


def test_simulate_writes_manifest(tmp_path):
    assert main(["simulate", *SMALL, "--out-dir", str(tmp_path)]) == 0
    man = RunManifest.read(tmp_path / "manifest.json")
    assert man.config["grid.n"] == 16
    for name in ("series.csv", "final.nse3"):
        assert (tmp_path / name).exists()


@pytest.fixture(scope="module")
def recorded(tmp_path_factory):
    out = tmp_path_factory.mktemp("rec")
    assert main(["simulate", *SMALL, "--record", "--out-dir", str(out)]) == 0
    return out


def test_record_and_replay(recorded, tmp_path, capsys):
    rec = ObservationRecord.load(os.path.join(recorded, "observations.nsob"))
    assert len(rec) == 11
    assert main(["replay", *SMALL, "--record", str(recorded / "observations.nsob"),
                 "--mu", "2.0", "--out-dir", str(tmp_path)]) == 0
    assert "replayed 10 steps" in capsys.readouterr().out
    man = RunManifest.read(tmp_path / "manifest.json")
    assert man.verdicts["replay"] == "completed"


def test_replay_grid_mismatch(recorded, tmp_path):
    code = main(["replay", "--set", "grid.n=8", "--record", str(recorded / "observations.nsob"),
                 "--mu", "1", "--out-dir", str(tmp_path)])
    assert code == 2


def test_analyze_kinf(tmp_path, capsys):
    assert main(["simulate", *SMALL, "--set", "interp.cutoff=inf", "--set", "init.amplitude=1e-4",
                 "--record", "--out-dir", str(tmp_path)]) == 0
    capsys.readouterr()
    code = main(["analyze", "--mode", "kinf", "--record", str(tmp_path / "observations.nsob"),
                 "--nu", "0.1"])
    out = last_json(capsys.readouterr().out)
    assert code == 0
    assert out["lambda_star"] > 0 and out["M_K_curve"]
    assert out["window"]["lower"] <= out["window"]["upper"]


def test_analyze_kinf_truncated_record(recorded, capsys):
    code = main(["analyze", "--mode", "kinf", "--record", str(recorded / "observations.nsob"),
                 "--nu", "0.1"])
    assert code == 2
    assert "shells up to" in capsys.readouterr().err


def test_analyze_needs_record():
    assert main(["analyze", "--mode", "window", "--nu", "0.1"]) == 2

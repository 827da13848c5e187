import json
import warnings
from pathlib import Path

import pytest
import yaml

from detfunc.cli import main
from detfunc.config import ConfigError, load_config, parse_config
from detfunc.scenarios import RUNNERS, run_scenario

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


def load(name):
    return yaml.safe_load((CONFIGS / name).read_text())


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path, capsys):
    assert main(["validate", str(path)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["scenario"] == load_config(path).scenario


def test_every_scenario_has_a_config():
    assert {load_config(p).scenario for p in CONFIGS.glob("*.yaml")} == set(RUNNERS)


def test_unknown_key_names_its_path(tmp_path, capsys):
    data = load("nudge.yaml")
    data["problem"]["m_gird"] = 16
    assert main(["validate", str(write(tmp_path, data))]) == 2
    assert "problem.m_gird" in capsys.readouterr().err


def test_unknown_param_rejected(tmp_path):
    data = load("nudge.yaml")
    data["params"]["gain"] = 3
    assert main(["validate", str(write(tmp_path, data))]) == 2


def test_unknown_scenario():
    with pytest.raises(ConfigError, match="unknown scenario"):
        parse_config({"scenario": "nope"})


def test_invalid_yaml_and_missing_file(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("scenario: [unclosed\n")
    assert main(["validate", str(p)]) == 2
    assert main(["run", str(tmp_path / "absent.yaml")]) == 2


def test_run_writes_artifacts(tmp_path):
    out = tmp_path / "fb"
    assert main(["run", str(CONFIGS / "feedback.yaml"), "--output", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    manifest = json.loads((out / "manifest.json").read_text())
    assert summary["status"] == manifest["status"] == "complete"
    kinds = {f["kind"] for f in manifest["files"]}
    assert kinds == {"timeseries", "summary"}
    for f in manifest["files"]:
        assert (out / f["path"]).exists() and len(f["sha256"]) == 64


def test_summary_is_deterministic(tmp_path):
    cfg = load_config(CONFIGS / "nudge.yaml")
    a = run_scenario(cfg, tmp_path / "a")
    b = run_scenario(cfg, tmp_path / "b")
    assert (a.root / "summary.json").read_bytes() == (b.root / "summary.json").read_bytes()
    ha = {f["path"]: f["sha256"] for f in a.manifest["files"]}
    hb = {f["path"]: f["sha256"] for f in b.manifest["files"]}
    assert ha == hb


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("DETFUNC_OUTPUT_ROOT", str(tmp_path / "elsewhere"))
    assert main(["run", str(CONFIGS / "wave_separation.yaml")]) == 0
    assert (tmp_path / "elsewhere" / "wave_separation" / "manifest.json").exists()


def test_blowup_exit_code_and_partial_flag(tmp_path):
    data = load("nudge.yaml")
    data["params"]["K"] = 1000.0
    out = tmp_path / "out"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        code = main(["run", str(write(tmp_path, data)), "--output", str(out)])
    assert code == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "partial"
    assert "non-finite" in manifest["error"]
    assert json.loads((out / "summary.json").read_text())["blowup_time"] > 0


def test_plotdata_long_format(tmp_path):
    out = tmp_path / "fb"
    main(["run", str(CONFIGS / "feedback.yaml"), "--output", str(out)])
    assert main(["plotdata", str(out / "manifest.json")]) == 0
    lines = (out / "plotdata.csv").read_text().splitlines()
    assert lines[0] == "series,t,value"
    assert len(lines) > 1
    series, t, value = lines[1].split(",")
    assert "/" in series
    float(t), float(value)


def test_plotdata_empty_manifest(tmp_path):
    m = tmp_path / "manifest.json"
    m.write_text(json.dumps({"files": []}))
    dest = tmp_path / "p.csv"
    assert main(["plotdata", str(m), "-o", str(dest)]) == 0
    assert dest.read_text() == "series,t,value\n"


def test_plotdata_missing_artifact(tmp_path):
    m = tmp_path / "manifest.json"
    m.write_text(json.dumps({"files": [{"kind": "timeseries", "experiment": "x",
                                        "path": "x/timeseries.csv"}]}))
    assert main(["plotdata", str(m)]) == 2
    assert main(["plotdata", str(tmp_path / "none.json")]) == 2

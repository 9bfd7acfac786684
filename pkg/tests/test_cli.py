import json

import numpy as np
import pytest

from geopose.cli import configure_logging, main
from geopose.config import KEYS, ConfigError, RunConfig, parse_override
from geopose.data import load_dataset, load_ele
from geopose.pipeline import MissingStageError, Run

TINY = ["--set", "n=24", "--set", "size=32", "--set", "unet.max_epochs=1",
        "--set", "scale_angle.max_epochs=1", "--set", "autoencoder.max_epochs=1"]


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(autouse=True)
def quiet(monkeypatch):
    monkeypatch.setenv("GEOPOSE_LOG", "error")


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    mp = pytest.MonkeyPatch()
    mp.setenv("GEOPOSE_LOG", "error")
    try:
        assert main(["generate", "--out", str(root), *TINY]) == 0
        for stage in ("clean", "train-unet", "interpolate", "train-scale-angle",
                      "train-autoencoder", "evaluate", "mds"):
            assert main([stage, "--run", str(root)]) == 0, stage
    finally:
        mp.undo()
    return root


# -- config -----------------------------------------------------------------


def test_config_text_round_trip():
    cfg = RunConfig().with_overrides({"unet.depth": 3, "scale_angle.fc_sizes": "64,32,16,8,4,2"})
    back = RunConfig.from_text(cfg.to_text())
    assert back.as_dict() == cfg.as_dict()
    assert back["scale_angle.fc_sizes"] == (64, 32, 16, 8, 4, 2)
    assert set(back.as_dict()) == set(KEYS)


def test_config_rejects_unknown_and_malformed():
    with pytest.raises(ConfigError, match="unknown config key"):
        RunConfig().set("unet.dropout", "0.5")
    with pytest.raises(ConfigError, match="unet.depth"):
        RunConfig().set("unet.depth", "four")
    with pytest.raises(ConfigError, match="line 2"):
        RunConfig.from_text("n=10\nsize 32\n")
    with pytest.raises(ConfigError):
        parse_override("seed")


def test_config_comments_and_layering():
    base = RunConfig().with_overrides({"n": 40})
    cfg = RunConfig.from_text("# tiny run\n\nsize = 32\nrestore_best=false\n", base)
    assert (cfg["n"], cfg["size"], cfg["restore_best"]) == (40, 32, False)


def test_config_typed_views():
    cfg = RunConfig().with_overrides({"size": 32, "seed": 3})
    assert cfg.unet_config().input_size == 32
    assert cfg.scale_angle_config("elevation").input_channels == 1
    assert cfg.autoencoder_config().bottleneck_spatial == (4, 4, 16)
    tc = cfg.train_config("scale_angle", 100)
    assert (tc.seed, tc.split_fraction) == (103, 0.80)
    with pytest.raises(ConfigError):
        cfg.scale_angle_config("infrared")


# -- command line ---------------------------------------------------------------


def test_list_keys(capsys):
    assert main(["--list-keys"]) == 0
    out = capsys.readouterr().out
    assert "unet.max_epochs" in out and "scale_angle.channels" in out


def test_no_command_is_usage_error(capsys):
    assert main([]) == 2


def test_unknown_key_rejected(tmp_path, capsys):
    assert main(["generate", "--out", str(tmp_path), "--set", "unet.widgets=3"]) == 2
    assert "unet.widgets" in capsys.readouterr().err
    assert not (tmp_path / "raw").exists()


def test_missing_prerequisite_names_stage(tmp_path, capsys):
    assert main(["train-unet", "--run", str(tmp_path)]) == 2
    assert "'clean'" in capsys.readouterr().err
    with pytest.raises(MissingStageError) as info:
        Run(tmp_path).require("interpolate")
    assert info.value.stage == "interpolate"


def test_bad_log_level(monkeypatch, tmp_path, capsys):
    monkeypatch.setenv("GEOPOSE_LOG", "verbose")
    assert main(["generate", "--out", str(tmp_path), *TINY]) == 2
    assert "GEOPOSE_LOG" in capsys.readouterr().err
    assert configure_logging({"GEOPOSE_LOG": "DEBUG"}) == "debug"
    assert configure_logging({}) == "info"
    configure_logging({"GEOPOSE_LOG": "error"})


def test_invalid_value_fails_cleanly(tmp_path, capsys):
    assert main(["generate", "--out", str(tmp_path), "--n", "0"]) == 1
    assert "n must be" in capsys.readouterr().err


def test_generate_is_deterministic_and_records_config(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["generate", "--out", str(d), *TINY, "--seed", "11", "--threads", "1"]) == 0
    assert tree_bytes(a) == tree_bytes(b)
    written = RunConfig.load(a / "config.txt")
    assert (written["n"], written["size"], written["seed"]) == (24, 32, 11)
    assert len(load_dataset(a / "raw")) == 24


def test_config_file_then_set(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("n=12\nsize=32\n# comment\nseed=5\n")
    out = tmp_path / "r"
    assert main(["generate", "--out", str(out), "--config", str(cfg_file), "--set", "seed=6"]) == 0
    written = RunConfig.load(out / "config.txt")
    assert (written["n"], written["seed"]) == (12, 6)


def test_pipeline_artifacts(tiny_run):
    for name in ("metrics.json", "mds.csv", "unet/weights.gpw", "scale_angle/target_stats.txt",
                 "interp/interpolation.csv", "clean/cleaning.csv", "figures/scale_val.png"):
        assert (tiny_run / name).is_file(), name
    metrics = json.loads((tiny_run / "metrics.json").read_text())
    for target in ("elevation", "scale", "angle"):
        assert set(metrics[target]) == {"train", "val"}
    assert metrics["units"] == {"elevation": "m", "scale": "px/dam", "angle": "rad"}
    assert not any(r.has_nan for r in load_dataset(tiny_run / "interp"))
    rows = (tiny_run / "mds.csv").read_text().splitlines()
    assert rows[0] == "id,x,y,scale_px_per_dam,angle_rad" and len(rows) == 25


def test_scale_angle_refuses_nan_data(tiny_run, capsys):
    assert any(r.has_nan for r in load_dataset(tiny_run / "clean"))
    code = main(["train-scale-angle", "--run", str(tiny_run), "--data", str(tiny_run / "clean")])
    assert code == 3
    assert "interpolate" in capsys.readouterr().err


def test_predict_writes_outputs(tiny_run, tmp_path, capsys):
    dest = tmp_path / "pred"
    assert main(["predict", "--run", str(tiny_run), "--input", str(tiny_run / "raw" / "img0003.ppm"),
                 "--dest", str(dest)]) == 0
    assert "img0003: scale" in capsys.readouterr().out
    elev = load_ele(dest / "img0003.ele")
    assert elev.values.shape == (32, 32) and np.all(elev.values >= 0)
    lines = (dest / "predictions.csv").read_text().splitlines()
    assert lines[0] == "id,scale_px_per_dam,angle_rad" and lines[1].startswith("img0003,")

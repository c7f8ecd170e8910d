import json
import subprocess
import sys

import numpy as np
import pytest

from scene import config as cfgio
from scene.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, run
from scene.errors import ConfigError
from scene.eval import RdCurve, write_rd_csv
from scene.harness import read_y4m, read_y4m_planes
from scene.model import ModelConfig
from scene.trainer import TrainConfig


def test_default_config_roundtrips_through_json():
    cfg = TrainConfig()
    data = json.loads(json.dumps(cfgio.to_dict(cfg)))
    assert cfgio.from_dict(TrainConfig, data) == cfg
    toy = TrainConfig.toy(dataset="somewhere")
    assert cfgio.from_dict(TrainConfig, cfgio.to_dict(toy)) == toy


def test_every_leaf_key_is_documented_in_help(capsys):
    assert run(["--help"]) == EXIT_OK
    out = capsys.readouterr().out

    def leaves(d, prefix=""):
        for k, v in d.items():
            if isinstance(v, dict):
                yield from leaves(v, f"{prefix}{k}.")
            else:
                yield prefix + k

    for key in leaves(cfgio.to_dict(TrainConfig())):
        assert f"  {key} (" in out, key


def test_overrides_are_typed_and_checked():
    cfg = cfgio.load_config(None, ["lr=0.01", "model.block_channels=16", "flips=false", "provider.path=x.semb"])
    assert cfg.lr == 0.01 and cfg.model.block_channels == 16 and cfg.flips is False
    assert cfg.provider.path == "x.semb"
    for bad in ["nope=1", "model.width=3", "lr=fast", "epochs=1.5", "model=3", "lr.x=1", "novalue"]:
        with pytest.raises(ConfigError):
            cfgio.load_config(None, [bad])


def test_unknown_key_in_file_rejected(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"model": {"channels": 8}}))
    with pytest.raises(ConfigError, match="model.channels"):
        cfgio.load_config(tmp_path / "c.json")


def test_usage_errors_exit_one(tmp_path, capsys):
    assert run([]) == EXIT_USAGE
    assert run(["frobnicate"]) == EXIT_USAGE
    assert run(["train", "--out", str(tmp_path), "--set", "bogus=1"]) == EXIT_USAGE
    assert run(["train", "--out", str(tmp_path)]) == EXIT_USAGE  # no dataset


def test_runtime_errors_exit_two(tmp_path):
    assert run(["bdrate", "--anchor", str(tmp_path / "a.csv"), "--test", str(tmp_path / "b.csv")]) == EXIT_RUNTIME
    (tmp_path / "bad.scn").write_bytes(b"junk")
    args = ["enhance", "--checkpoint", str(tmp_path / "bad.scn"), "--input", "x.y4m", "--output", "y.y4m"]
    assert run(args) == EXIT_RUNTIME


def test_bdrate_command(tmp_path, capsys):
    rates, metrics = [100.0, 200.0, 400.0, 800.0], [0.9, 0.94, 0.97, 0.985]
    a = RdCurve.from_pairs(zip(rates, metrics), "a")
    half = RdCurve.from_pairs(zip(np.array(rates) / 2, metrics), "b")
    far = RdCurve.from_pairs(zip(rates, np.array(metrics) - 0.5), "c")
    for name, curve in (("a", a), ("half", half), ("far", far)):
        write_rd_csv(tmp_path / f"{name}.csv", [curve])
    assert run(["bdrate", "--anchor", str(tmp_path / "a.csv"), "--test", str(tmp_path / "a.csv")]) == 0
    assert capsys.readouterr().out.strip() == "0.00%"
    run(["bdrate", "--anchor", str(tmp_path / "a.csv"), "--test", str(tmp_path / "half.csv")])
    assert capsys.readouterr().out.strip() == "-50.00%"
    run(["bdrate", "--anchor", str(tmp_path / "a.csv"), "--test", str(tmp_path / "far.csv")])
    assert capsys.readouterr().out.strip().startswith("undefined (")


@pytest.fixture(scope="module")
def fixtures_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fx")
    assert run(["gen-fixtures", "--out", str(out)]) == EXIT_OK
    return out


def test_gen_fixtures_contents(fixtures_dir):
    names = {p.name for p in fixtures_dir.iterdir()}
    assert {"clips", "eval.y4m", "default.json", "toy.json", "identity.scn", "oracles.json", "ms_ssim_pair.npz"} <= names
    assert cfgio.load_config(fixtures_dir / "default.json") == TrainConfig()
    toy = cfgio.load_config(fixtures_dir / "toy.json")
    assert toy.model == ModelConfig.toy()
    assert len(read_y4m(fixtures_dir / "eval.y4m")) == 8


def test_gen_fixtures_is_deterministic(fixtures_dir, tmp_path):
    run(["gen-fixtures", "--out", str(tmp_path)])
    for name in ("eval.y4m", "identity.scn", "oracles.json", "clips/synth00.y4m"):
        assert (tmp_path / name).read_bytes() == (fixtures_dir / name).read_bytes()


def test_enhance_with_identity_checkpoint(fixtures_dir, tmp_path):
    out = tmp_path / "out.y4m"
    args = ["enhance", "--config", str(fixtures_dir / "toy.json"), "--checkpoint", str(fixtures_dir / "identity.scn"),
            "--input", str(fixtures_dir / "eval.y4m"), "--output", str(out)]
    assert run(args) == EXIT_OK
    _, src = read_y4m_planes(fixtures_dir / "eval.y4m")
    _, dst = read_y4m_planes(out)
    worst = max(int(np.abs(a.astype(int) - b.astype(int)).max()) for fa, fb in zip(src, dst) for a, b in zip(fa, fb))
    assert worst <= 1


def test_train_then_eval_end_to_end(fixtures_dir, tmp_path, encoder, capsys):
    run_dir = tmp_path / "run"
    args = ["train", "--config", str(fixtures_dir / "toy.json"), "--set", "max_steps=6", "--seed", "1",
            "--out", str(run_dir)]
    assert run(args) == EXIT_OK
    assert (run_dir / "checkpoints/final.scn").exists()
    assert cfgio.load_config(run_dir / "config.json").seed == 1
    args = ["eval", "--config", str(fixtures_dir / "toy.json"), "--checkpoint", str(run_dir / "checkpoints/final.scn"),
            "--input", str(fixtures_dir / "eval.y4m"), "--out", str(tmp_path / "ev")]
    assert run(args) == EXIT_OK
    assert "BD-rate (h264, cubic):" in capsys.readouterr().out
    assert (tmp_path / "ev/rd.csv").exists()


def test_probe_command(encoder, capsys):
    assert run(["probe"]) == EXIT_OK
    assert "h264: yes" in capsys.readouterr().out


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "scene.cli", "bdrate"], capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE
    assert "required" in proc.stderr

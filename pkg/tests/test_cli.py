import json
import struct

import numpy as np
import pytest

from idlv.autodiff import Architecture, default_architecture
from idlv.checkpoint import CheckpointMeta, checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint
from idlv.cli import dispatch, parse_config
from idlv.errors import CheckpointError, ConfigError
from idlv.siamese import SiameseModel, embed


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        model = SiameseModel.initialize(default_architecture(64), 3)
        meta = CheckpointMeta(margin=1.5, threshold=0.42, seed=2**63 + 5, epochs=30)
        save_checkpoint(model, meta, tmp_path / "m.ckpt")
        back, back_meta = load_checkpoint(tmp_path / "m.ckpt")
        assert back_meta == meta
        assert back.architecture == model.architecture
        for (_, _, p, _), (_, _, q, _) in zip(model.store.items(), back.store.items()):
            assert p.tobytes() == q.tobytes()
        x = rng.uniform(size=(3, 1, 64, 64))
        assert embed(back, x).tobytes() == embed(model, x).tobytes()
        assert back.embedding_dim == 32 and embed(back, x[0]).shape == (32,)

    def test_deterministic_bytes(self, tmp_path):
        model = SiameseModel.initialize(default_architecture(16, 8), 1)
        save_checkpoint(model, CheckpointMeta(), tmp_path / "a")
        save_checkpoint(model, CheckpointMeta(), tmp_path / "b")
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_no_threshold(self):
        model = SiameseModel.initialize(default_architecture(16, 8), 1)
        _, meta = parse_checkpoint(checkpoint_bytes(model, CheckpointMeta(threshold=None)))
        assert meta.threshold is None

    def test_bad_magic(self):
        data = checkpoint_bytes(SiameseModel.initialize(default_architecture(16, 8)), CheckpointMeta())
        with pytest.raises(CheckpointError, match="magic"):
            parse_checkpoint(b"IDLV-CKPX" + data[9:])

    def test_bad_version(self):
        data = checkpoint_bytes(SiameseModel.initialize(default_architecture(16, 8)), CheckpointMeta())
        with pytest.raises(CheckpointError, match="version"):
            parse_checkpoint(data[:9] + struct.pack("<I", 99) + data[13:])

    def test_truncated(self):
        data = checkpoint_bytes(SiameseModel.initialize(default_architecture(16, 8)), CheckpointMeta())
        for cut in (5, 20, len(data) // 2, len(data) - 1):
            with pytest.raises(CheckpointError):
                parse_checkpoint(data[:cut])

    def test_shape_inconsistency(self):
        small = SiameseModel.initialize(Architecture.parse("flatten dense:3", (1, 2, 2)))
        data = checkpoint_bytes(small, CheckpointMeta())
        arch_len = struct.unpack("<I", data[13:17])[0]
        bigger = json.dumps(Architecture.parse("flatten dense:3", (1, 3, 3)).to_dict(), sort_keys=True, separators=(",", ":"))
        assert len(bigger) == arch_len
        with pytest.raises(CheckpointError, match="inconsistent"):
            parse_checkpoint(data[:17] + bigger.encode() + data[17 + arch_len :])


class TestConfig:
    def test_parse(self):
        cfg = parse_config("# run\nmargin = 2.0\nepochs=3 # short\n\nseed = 9\narchitecture = flatten dense:4\n")
        assert (cfg.margin, cfg.epochs, cfg.seed) == (2.0, 3, 9)
        assert cfg.build_architecture().output_shape == (4,)

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config("momentum = 0.9\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            parse_config("epochs = many\n")
        with pytest.raises(ConfigError):
            parse_config("margin = -1\n")
        with pytest.raises(ConfigError):
            parse_config("just words\n")


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    data, ckpt, gal, report = root / "data", root / "m.ckpt", root / "g.bin", root / "r.csv"
    cfg = root / "run.cfg"
    cfg.write_text("image_size = 16\nepochs = 3\nbatch_size = 8\nseed = 5\n")
    assert dispatch(["synth", "--out", str(data), "--clients", "3", "--reals", "5", "--fakes", "5", "--size", "16", "--seed", "5"]) == 0
    assert dispatch(["train", "--data", str(data), "--config", str(cfg), "--out", str(ckpt)]) == 0
    assert dispatch(["calibrate", "--data", str(data), "--ckpt", str(ckpt), "--gallery", str(gal)]) == 0
    assert dispatch(["eval", "--data", str(data), "--ckpt", str(ckpt), "--gallery", str(gal), "--report", str(report)]) == 0
    return root


class TestDispatch:
    def test_outputs_written(self, pipeline):
        _, meta = load_checkpoint(pipeline / "m.ckpt")
        assert meta.threshold is not None and meta.epochs == 3
        body = json.loads((pipeline / "r.json").read_text())
        assert 0 <= body["report"]["hter"] <= 1
        assert (pipeline / "r.csv").read_text().startswith("tau,frr,far,hter\n")

    def test_verify_reference_is_real(self, pipeline, capsys):
        ref = sorted((pipeline / "data" / "train" / "client00" / "real").iterdir())[0]
        code = dispatch(["verify", "--ckpt", str(pipeline / "m.ckpt"), "--gallery", str(pipeline / "g.bin"), "--client", "client00", "--image", str(ref)])
        assert code == 0
        out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert out["verdict"] == "REAL" and out["distance"] == 0.0

    def test_verify_unknown_client(self, pipeline, capsys):
        ref = sorted((pipeline / "data" / "train" / "client00" / "real").iterdir())[0]
        code = dispatch(["verify", "--ckpt", str(pipeline / "m.ckpt"), "--gallery", str(pipeline / "g.bin"), "--client", "ghost", "--image", str(ref)])
        assert code == 1
        assert "ghost" in capsys.readouterr().err

    def test_eval_missing_checkpoint(self, pipeline, capsys):
        missing = pipeline / "nope.ckpt"
        code = dispatch(["eval", "--data", str(pipeline / "data"), "--ckpt", str(missing), "--gallery", str(pipeline / "g.bin"), "--report", str(pipeline / "x.csv")])
        assert code == 1
        assert "nope.ckpt" in capsys.readouterr().err

    def test_gallery_from_other_model_rejected(self, pipeline, tmp_path, capsys):
        other = SiameseModel.initialize(Architecture.parse("conv:8:3:1:1 relu pool:2:2 conv:16:3:1:1 relu pool:2:2 flatten dense:32", (1, 16, 16)), 77)
        save_checkpoint(other, CheckpointMeta(), tmp_path / "o.ckpt")
        code = dispatch(["eval", "--data", str(pipeline / "data"), "--ckpt", str(tmp_path / "o.ckpt"), "--gallery", str(pipeline / "g.bin"), "--report", str(tmp_path / "x.csv")])
        assert code == 1
        assert "different model" in capsys.readouterr().err

    def test_usage_errors(self, capsys):
        assert dispatch(["frobnicate"]) == 2
        assert dispatch(["synth", "--bogus", "1"]) == 2
        assert dispatch([]) == 2
        assert "usage" in capsys.readouterr().err

    def test_help_is_success(self):
        assert dispatch(["--help"]) == 0

    def test_train_unknown_config_key(self, pipeline, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("optimizer = adam\n")
        assert dispatch(["train", "--data", str(pipeline / "data"), "--config", str(bad), "--out", str(tmp_path / "m")]) == 1

    def test_log_level_env(self, monkeypatch, tmp_path):
        monkeypatch.setenv("IDLV_LOG", "debug")
        assert dispatch(["synth", "--out", str(tmp_path / "d"), "--clients", "1", "--reals", "2", "--fakes", "2", "--size", "4"]) == 0

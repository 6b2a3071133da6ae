import zipfile

import numpy as np
import pytest

from oiaedl.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from oiaedl.model import ModelConfig, init_params
from oiaedl.nn import Rng

CFG = ModelConfig(encoder_hidden_dims=(8, 4), head_hidden_dim=6, kl_weight=0.25)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        params = init_params(CFG, Rng(3))
        params.data[:5] = [np.pi, -0.0, 1e-310, np.nextafter(1.0, 2.0), -1e300]
        path = save_checkpoint(tmp_path / "m.ckpt", params, CFG, {"phase": 1, "seed": 3})
        ck = load_checkpoint(path)
        assert ck.params.data.tobytes() == params.data.tobytes()
        assert ck.config == CFG
        assert ck.provenance == {"phase": 1, "seed": 3}
        assert [n for n, _ in ck.params.specs()] == [n for n, _ in params.specs()]

    def test_identical_files(self, tmp_path):
        params = init_params(CFG, Rng(1))
        a = save_checkpoint(tmp_path / "a.ckpt", params, CFG)
        b = save_checkpoint(tmp_path / "b.ckpt", params, CFG)
        assert a.read_bytes() == b.read_bytes()

    def test_layout_mismatch(self, tmp_path):
        other = ModelConfig(encoder_hidden_dims=(8, 5), head_hidden_dim=6)
        path = save_checkpoint(tmp_path / "m.ckpt", init_params(other, Rng(0)), CFG)
        with pytest.raises(CheckpointError, match="layout"):
            load_checkpoint(path)

    def test_truncated_weights(self, tmp_path):
        path = save_checkpoint(tmp_path / "m.ckpt", init_params(CFG, Rng(0)), CFG)
        with zipfile.ZipFile(path) as zf:
            manifest, blob = zf.read("manifest.json"), zf.read("weights.bin")
        with zipfile.ZipFile(path, "w") as zf:
            zf.writestr("manifest.json", manifest)
            zf.writestr("weights.bin", blob[:-8])
        with pytest.raises(CheckpointError, match="expected"):
            load_checkpoint(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_text("hello")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "missing.ckpt")

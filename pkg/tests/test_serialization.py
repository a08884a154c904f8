"""Checkpoint and history file round trips."""

from __future__ import annotations

import numpy as np
import pytest

from fbcomm.codec import CodecConfig, init_codec
from fbcomm.errors import ConfigError
from fbcomm.serialization import (
    Checkpoint,
    load_checkpoint,
    load_history,
    save_checkpoint,
    save_history,
)
from fbcomm.training import OptimizerState

CONFIG = CodecConfig(n_bits=4, snr_db=1.5, snr_fb_db=9.0, d_m=8,
                     q_tx=1, q_rx=2)


def fresh_model(seed=0):
    return init_codec(CONFIG, np.random.default_rng(seed))


class TestCheckpointRoundTrip:
    def test_model_and_config_survive(self, tmp_path):
        model = fresh_model(1)
        cal = np.random.default_rng(2).uniform(0.5, 2.0,
                                               2 * CONFIG.n_interactions)
        path = tmp_path / "model.ckpt"
        save_checkpoint(str(path), CONFIG, model, cal)
        back = load_checkpoint(str(path))
        assert back.config == CONFIG
        assert back.optimizer is None
        assert np.array_equal(back.calibration, cal)
        for (na, ta), (nb, tb) in zip(model.named_tensors(),
                                      back.model.named_tensors()):
            assert na == nb
            assert np.array_equal(ta, tb)

    def test_optimizer_section_survives(self, tmp_path):
        model = fresh_model(3)
        params = {n: v for n, v in model.named_tensors()
                  if not n.endswith("w_pos")}
        state = OptimizerState(params)
        state.step = 17
        rng = np.random.default_rng(4)
        for n in state.m:
            state.m[n] = rng.normal(size=state.m[n].shape)
            state.v[n] = rng.uniform(size=state.v[n].shape)
        path = tmp_path / "resume.ckpt"
        cal = np.ones(2 * CONFIG.n_interactions)
        save_checkpoint(str(path), CONFIG, model, cal, state)
        back = load_checkpoint(str(path))
        assert back.optimizer is not None
        assert back.optimizer.step == 17
        for n in state.m:
            assert np.array_equal(back.optimizer.m[n], state.m[n])
            assert np.array_equal(back.optimizer.v[n], state.v[n])

    def test_writer_is_deterministic(self, tmp_path):
        model = fresh_model(5)
        cal = np.ones(2 * CONFIG.n_interactions)
        a = tmp_path / "a.ckpt"
        b = tmp_path / "b.ckpt"
        save_checkpoint(str(a), CONFIG, model, cal)
        save_checkpoint(str(b), CONFIG, model, cal)
        assert a.read_bytes() == b.read_bytes()

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"something else entirely\n")
        with pytest.raises(ConfigError):
            load_checkpoint(str(path))

    def test_truncated_payload_rejected(self, tmp_path):
        model = fresh_model(6)
        cal = np.ones(2 * CONFIG.n_interactions)
        path = tmp_path / "short.ckpt"
        save_checkpoint(str(path), CONFIG, model, cal)
        blob = path.read_bytes()
        path.write_bytes(blob + b"\x00" * 8)
        with pytest.raises(ConfigError):
            load_checkpoint(str(path))


class TestHistoryFiles:
    def test_round_trip(self, tmp_path):
        rows = [(1, "curriculum-0", 4.0, 0.693), (2, "retrain-0", 3.5, 0.41)]
        path = tmp_path / "history.csv"
        save_history(str(path), rows)
        assert load_history(str(path)) == rows
        text = path.read_text()
        assert text.splitlines()[0] == "update_index,stage,train_snr_db,loss"

    def test_header_mismatch_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ConfigError):
            load_history(str(path))

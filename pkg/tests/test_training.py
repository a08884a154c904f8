"""Optimizer contracts and the training loop."""

from __future__ import annotations

import copy
import math

import numpy as np
import pytest

from fbcomm.codec import CodecConfig, draw_noise, init_codec
from fbcomm.errors import ConfigError
from fbcomm.training import (
    OptimizerState,
    TrainConfig,
    adam_step,
    distributed_grad,
    lookahead_update,
    train,
)

TOY = CodecConfig(n_bits=3, snr_db=2.0, snr_fb_db=None, d_m=8, q_tx=1, q_rx=1)


def toy_batch(batch, seed):
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, (batch, TOY.n_bits)).astype(float)
    noise = draw_noise(TOY, batch, rng)
    return bits, noise


class TestAdam:
    def test_first_step_magnitude_is_learning_rate(self):
        params = {"a": np.array([1.0]), "b": np.array([1.0])}
        grads = {"a": np.array([0.3]), "b": np.array([0.6])}
        state = OptimizerState(params)
        new = adam_step(params, grads, state, lr=1e-3)
        move_a = (params["a"] - new["a"]).item()
        move_b = (params["b"] - new["b"]).item()
        assert move_a == pytest.approx(1e-3, rel=1e-5)
        assert move_b == pytest.approx(1e-3, rel=1e-5)
        assert move_a == pytest.approx(move_b, rel=1e-6)

    def test_moments_accumulate_across_steps(self):
        params = {"a": np.array([0.0])}
        state = OptimizerState(params)
        g = {"a": np.array([1.0])}
        p = adam_step(params, g, state)
        p = adam_step(p, g, state)
        assert state.step == 2
        assert state.m["a"].item() == pytest.approx(1.0 - 0.9**2)
        assert state.v["a"].item() == pytest.approx(1.0 - 0.98**2)

    def test_name_mismatch_rejected(self):
        params = {"a": np.array([0.0])}
        state = OptimizerState(params)
        with pytest.raises(ConfigError):
            adam_step(params, {"b": np.array([0.0])}, state)

    def test_direction_follows_gradient_sign(self):
        params = {"a": np.array([0.0, 0.0])}
        state = OptimizerState(params)
        new = adam_step(params, {"a": np.array([1.0, -1.0])}, state, lr=0.01)
        assert new["a"][0] < 0 < new["a"][1]


class TestDistributedGrad:
    def test_sharded_sum_matches_monolithic(self):
        rng = np.random.default_rng(31)
        model = init_codec(TOY, rng)
        bits, noise = toy_batch(8, 5)
        cal = np.ones(2 * TOY.n_interactions)
        mono, loss_mono = distributed_grad(model, TOY, cal, bits, noise, 1)
        for shards in (2, 4, 8):
            split, loss_split = distributed_grad(model, TOY, cal, bits, noise,
                                                 shards)
            assert loss_split == pytest.approx(loss_mono, abs=1e-12)
            for name in mono:
                worst = np.max(np.abs(split[name] - mono[name]))
                assert worst < 1e-10, f"{name} differs by {worst}"

    def test_uneven_shards_still_match(self):
        rng = np.random.default_rng(32)
        model = init_codec(TOY, rng)
        bits, noise = toy_batch(7, 6)
        cal = np.ones(2 * TOY.n_interactions)
        mono, _ = distributed_grad(model, TOY, cal, bits, noise, 1)
        split, _ = distributed_grad(model, TOY, cal, bits, noise, 3)
        for name in mono:
            assert np.max(np.abs(split[name] - mono[name])) < 1e-10

    def test_more_shards_than_blocks_rejected(self):
        model = init_codec(TOY, np.random.default_rng(0))
        bits, noise = toy_batch(2, 7)
        with pytest.raises(ConfigError):
            distributed_grad(model, TOY, np.ones(2 * TOY.n_interactions),
                             bits, noise, 3)


class TestLookahead:
    def test_single_inner_step_is_identity_wrapper(self):
        params = {"a": np.array([1.0, -2.0]), "b": np.array([[0.5]])}
        state_plain = OptimizerState(params)
        state_wrapped = OptimizerState(params)
        grads = {"a": np.array([0.2, -0.1]), "b": np.array([[1.0]])}

        plain = adam_step(params, grads, state_plain, lr=1e-2)

        def inner(p):
            return adam_step(p, grads, state_wrapped, lr=1e-2), 0.0

        wrapped, _ = lookahead_update(params, inner, 1)
        for name in params:
            assert np.array_equal(plain[name], wrapped[name])
        assert state_plain.step == state_wrapped.step == 1

    def test_four_step_quadratic_matches_hand_rolled_trajectory(self):
        # Plain gradient descent on f(x) = x^2 / 2 from 1.0 at rate 0.1:
        # the four-step trajectory is 0.9, 0.81, 0.729, 0.6561, and the
        # slow weight lands at 1 + (0.6561 - 1) / 4 = 0.914025.
        params = {"x": np.array([1.0])}

        def inner(p):
            return {"x": p["x"] - 0.1 * p["x"]}, (p["x"] ** 2 / 2).item()

        out, losses = lookahead_update(params, inner, 4)
        assert out["x"].item() == pytest.approx(0.914025, abs=1e-12)
        assert len(losses) == 4
        assert losses[0] == pytest.approx(0.5)

    def test_inner_moments_persist_across_phases(self):
        params = {"a": np.array([1.0])}
        state = OptimizerState(params)
        grads = {"a": np.array([1.0])}

        def inner(p):
            return adam_step(p, grads, state), 0.0

        out, _ = lookahead_update(params, inner, 2)
        assert state.step == 2
        out, _ = lookahead_update(out, inner, 2)
        assert state.step == 4

    def test_zero_steps_rejected(self):
        with pytest.raises(ConfigError):
            lookahead_update({"a": np.zeros(1)}, lambda p: (p, 0.0), 0)


class TestTrainLoop:
    def test_smoke_run_halves_the_loss(self):
        tc = TrainConfig(
            snr_schedule=((2.0, 60),),
            batch_size=96,
            learning_rate=2e-3,
            retrain=False,
            calibration_blocks=256,
            seed=11,
        )
        result = train(TOY, tc)
        assert not result.halted
        assert len(result.history) == 60
        first = result.history[0][3]
        last = result.history[-1][3]
        assert first == pytest.approx(math.log(2.0), abs=0.1)
        assert last < 0.5 * first

    def test_bit_reproducible_under_a_seed(self):
        tc = TrainConfig(
            snr_schedule=((3.0, 4), (2.0, 3)),
            batch_size=16,
            lookahead_steps=2,
            n_shards=2,
            retrain=True,
            mismatch_offset_db=-0.5,
            calibration_blocks=64,
            seed=5,
        )
        a = train(TOY, tc)
        b = train(TOY, tc)
        assert a.history == b.history
        for (na, ta), (nb, tb) in zip(a.model.named_tensors(),
                                      b.model.named_tensors()):
            assert na == nb
            assert np.array_equal(ta, tb)
        assert np.array_equal(a.calibration, b.calibration)

    def test_curriculum_and_retrain_stages_recorded(self):
        tc = TrainConfig(
            snr_schedule=((4.0, 2), (2.0, 2)),
            batch_size=8,
            retrain=True,
            mismatch_offset_db=-1.0,
            calibration_blocks=32,
            seed=3,
        )
        result = train(TOY, tc)
        stages = [row[1] for row in result.history]
        assert stages == ["curriculum-0"] * 2 + ["curriculum-1"] * 2 + \
            ["retrain-1"] * 2 + ["retrain-0"] * 2
        snrs = [row[2] for row in result.history]
        assert snrs == [4.0, 4.0, 2.0, 2.0, 1.0, 1.0, 3.0, 3.0]
        assert len(result.stage_checkpoints) == 4
        labels = [c[0] for c in result.stage_checkpoints]
        assert labels == ["curriculum-0", "curriculum-1", "retrain-1",
                          "retrain-0"]

    def test_power_weights_stay_unit_mean_square(self):
        tc = TrainConfig(
            snr_schedule=((2.0, 5),),
            batch_size=16,
            retrain=False,
            calibration_blocks=32,
            seed=9,
        )
        result = train(TOY, tc)
        pw = result.model.encoder.power_weights
        assert float(np.mean(pw**2)) == pytest.approx(1.0, abs=1e-12)

    def test_nan_loss_halts_and_keeps_last_finite_model(self):
        tc = TrainConfig(
            snr_schedule=((2.0, 6),),
            batch_size=8,
            learning_rate=float("nan"),
            retrain=False,
            calibration_blocks=32,
            seed=2,
        )
        result = train(TOY, tc)
        assert result.halted
        assert all(math.isfinite(row[3]) for row in result.history)
        for _, tensor in result.model.named_tensors():
            assert np.all(np.isfinite(tensor))

    def test_update_counts_respect_lookahead_remainder(self):
        tc = TrainConfig(
            snr_schedule=((2.0, 5),),
            batch_size=8,
            lookahead_steps=2,
            retrain=False,
            calibration_blocks=32,
            seed=4,
        )
        result = train(TOY, tc)
        assert len(result.history) == 5

    def test_empty_schedule_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(snr_schedule=())

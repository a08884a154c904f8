"""Gradient-based training of the learned feedback code.

The optimizer stack is Adam under a lookahead outer loop, with the
batch gradient optionally computed across several shards whose weighted
sum reproduces the monolithic gradient.  The curriculum first walks a
list of training SNRs from easy to hard, then retrains back up the
list; the transmitter's power weights are projected to unit mean square
after every update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .codec import (
    CodecConfig,
    CodecModel,
    calibrate,
    codec_forward,
    collect_grads,
    draw_noise,
    init_codec,
    lift_tensors,
    noise_slice,
    project_power_weights,
)
from .errors import ConfigError


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run."""

    snr_schedule: tuple[tuple[float, int], ...]
    batch_size: int = 64
    n_shards: int = 1
    lookahead_steps: int = 1
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    retrain: bool = True
    mismatch_offset_db: float = 0.0
    calibration_blocks: int = 2048
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.snr_schedule:
            raise ConfigError("snr_schedule must not be empty")
        if self.batch_size < self.n_shards or self.n_shards < 1:
            raise ConfigError("need at least one block per shard")
        if self.lookahead_steps < 1:
            raise ConfigError("lookahead needs at least one inner step")


class OptimizerState:
    """First and second moment accumulators plus the step counter."""

    def __init__(self, params: dict[str, np.ndarray]) -> None:
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps: float = 1e-9,
) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; mutates the moment state."""
    if set(params) != set(grads):
        raise ConfigError("gradient names do not match parameter names")
    state.step += 1
    t = state.step
    out = {}
    for name, p in params.items():
        g = grads[name]
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / (1.0 - beta1**t)
        v_hat = state.v[name] / (1.0 - beta2**t)
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return out


def distributed_grad(
    model: CodecModel,
    config: CodecConfig,
    calibration: np.ndarray,
    bits: np.ndarray,
    noise,
    n_shards: int = 1,
) -> tuple[dict[str, np.ndarray], float]:
    """Batch gradient assembled from per-shard gradients.

    The batch is split into contiguous shards in fixed order; each
    shard's mean gradient is weighted by its share of the batch and the
    weighted pieces are summed in shard order, so the result matches
    the single-tape gradient up to float reassociation.
    """
    batch = bits.shape[0]
    if n_shards < 1 or n_shards > batch:
        raise ConfigError("shard count must be between 1 and the batch size")
    bounds = np.linspace(0, batch, n_shards + 1).astype(int)
    if np.any(np.diff(bounds) == 0):
        raise ConfigError("every shard needs at least one block")

    tensors = dict(model.named_tensors())
    total: dict[str, np.ndarray] = {}
    loss = 0.0
    for v in range(n_shards):
        rows = slice(int(bounds[v]), int(bounds[v + 1]))
        weight = (rows.stop - rows.start) / batch
        tape = Tape()
        lifted = lift_tensors(tape, tensors)
        out = codec_forward(tape, lifted, bits[rows], noise_slice(noise, rows),
                            config, calibration)
        tape.backward(out.loss)
        shard = collect_grads(lifted)
        loss += weight * float(out.loss.value)
        for name, g in shard.items():
            if name in total:
                total[name] = total[name] + weight * g
            else:
                total[name] = weight * g
    return total, loss


def lookahead_update(
    params: dict[str, np.ndarray],
    inner_step,
    n_inner: int,
):
    """Slow-weight update: run the inner optimizer n_inner times from the
    current point, then move one n_inner-th of the way to where it got.

    With a single inner step the result is the inner step itself.
    inner_step(params) must return (new_params, loss); the list of
    inner losses is returned alongside the new slow weights.
    """
    if n_inner < 1:
        raise ConfigError("lookahead needs at least one inner step")
    start = params
    cur = params
    losses = []
    for _ in range(n_inner):
        cur, loss = inner_step(cur)
        losses.append(loss)
    if n_inner == 1:
        return cur, losses
    combined = {
        name: start[name] + (cur[name] - start[name]) / n_inner
        for name in params
    }
    return combined, losses


@dataclass
class TrainResult:
    """Everything a training run leaves behind."""

    model: CodecModel
    calibration: np.ndarray
    history: list[tuple[int, str, float, float]]
    halted: bool = False
    stage_checkpoints: list = field(default_factory=list)


def _apply(model: CodecModel, params: dict[str, np.ndarray]) -> CodecModel:
    return project_power_weights(model.with_tensors(params))


def train(config: CodecConfig, train_config: TrainConfig) -> TrainResult:
    """Run the two-step curriculum and return the trained codec.

    Stages walk the SNR schedule as given (easy to hard), each warm
    starting from the last; the retrain pass then walks it back up at
    the mismatch offset with plain Adam (no lookahead averaging).  A
    non-finite loss halts training and the last finite model wins.
    """
    model = init_codec(config, np.random.default_rng([train_config.seed, 0]))
    model = project_power_weights(model)

    params = {name: value for name, value in model.named_tensors()
              if not name.endswith("w_pos")}
    state = OptimizerState(params)

    stages: list[tuple[str, float, int, int]] = []
    for i, (snr, updates) in enumerate(train_config.snr_schedule):
        stages.append((f"curriculum-{i}", float(snr), updates,
                       train_config.lookahead_steps))
    if train_config.retrain:
        n = len(train_config.snr_schedule)
        for i, (snr, updates) in enumerate(reversed(train_config.snr_schedule)):
            stages.append((f"retrain-{n - 1 - i}",
                           float(snr) + train_config.mismatch_offset_db,
                           updates, 1))

    history: list[tuple[int, str, float, float]] = []
    checkpoints: list = []
    update_index = 0
    halted = False
    last_good = (dict(params), model)

    for stage_idx, (label, snr, updates, n_inner) in enumerate(stages):
        rng = np.random.default_rng([train_config.seed, 1 + stage_idx])
        stage_config = CodecConfig(
            n_bits=config.n_bits, snr_db=snr, snr_fb_db=config.snr_fb_db,
            power=config.power, d_m=config.d_m, q_tx=config.q_tx,
            q_rx=config.q_rx,
        )
        outer_steps = math.ceil(updates / n_inner)
        done = 0
        for _ in range(outer_steps):
            if halted:
                break
            inner_now = min(n_inner, updates - done)

            def inner_step(cur_params):
                nonlocal update_index, last_good
                cur_model = _apply(model, cur_params)
                bits = rng.integers(0, 2, (train_config.batch_size,
                                           config.n_bits)).astype(float)
                noise = draw_noise(stage_config, train_config.batch_size, rng)
                cal = calibrate(cur_model, bits, noise, stage_config)
                grads, loss = distributed_grad(
                    cur_model, stage_config, cal, bits, noise,
                    train_config.n_shards,
                )
                if math.isfinite(loss):
                    finite = dict(cur_params)
                    finite["enc.power_weights"] = cur_model.encoder.power_weights
                    last_good = (finite, cur_model)
                new_params = adam_step(
                    cur_params, grads, state,
                    lr=train_config.learning_rate,
                    beta1=train_config.beta1, beta2=train_config.beta2,
                    eps=train_config.eps,
                )
                update_index += 1
                history.append((update_index, label, snr, loss))
                return new_params, loss

            params, losses = lookahead_update(params, inner_step, inner_now)
            done += inner_now
            if any(not math.isfinite(l) for l in losses):
                halted = True
                params, model = last_good
                history = [row for row in history if math.isfinite(row[3])]
                break
            model = _apply(model, params)
            params["enc.power_weights"] = model.encoder.power_weights
        cal_rng = np.random.default_rng([train_config.seed, 7_001 + stage_idx])
        cal_bits = cal_rng.integers(
            0, 2, (train_config.calibration_blocks, config.n_bits)
        ).astype(float)
        cal_noise = draw_noise(stage_config, train_config.calibration_blocks,
                               cal_rng)
        stage_cal = calibrate(model, cal_bits, cal_noise, stage_config)
        checkpoints.append((label, model, stage_cal))
        if halted:
            break

    final_cal = checkpoints[-1][2]
    return TrainResult(
        model=model,
        calibration=final_cal,
        history=history,
        halted=halted,
        stage_checkpoints=checkpoints,
    )

"""Learned two-phase feedback code built from a pair of attention stacks.

Protocol: the transmitter first sends the K+1 padded bits as antipodal
symbols.  It then runs K+1 interactions; in each it assembles everything
it has learned from passive feedback into the aligned input matrix,
runs the masked stack, and sends the two symbols read off the last
column.  The receiver feeds its three received sequences to the
unmasked stack and reads per-bit probabilities off the head.

The forward is written against the operation set of the autodiff tape,
so one builder serves gradient-based training (Tape) and plain
evaluation (Eager).  Feedback noise samples are constants, but the
aggregated noise each interaction records is formed as y' - x on the
graph, which chains every step to the transmitter outputs before it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import (
    EncoderConfig,
    ModelParams,
    causal_mask,
    init_model_params,
    no_mask,
    renormalize_power_weights,
)
from .autodiff import Eager, node_value
from .errors import ConfigError

CAL_FLOOR = 1e-12


@dataclass(frozen=True)
class CodecConfig:
    """Geometry and channel operating point of the learned code."""

    n_bits: int
    snr_db: float
    snr_fb_db: float | None = None
    power: float = 1.0
    d_m: int = 32
    q_tx: int = 2
    q_rx: int = 3

    def __post_init__(self) -> None:
        if self.n_bits < 1:
            raise ConfigError("need at least one payload bit")
        if self.power <= 0:
            raise ConfigError("power must be positive")

    @property
    def n_interactions(self) -> int:
        return self.n_bits + 1

    @property
    def n_channel_uses(self) -> int:
        return 3 * (self.n_bits + 1)

    @property
    def rate(self) -> float:
        return self.n_bits / self.n_channel_uses

    @property
    def noise_var_forward(self) -> float:
        return self.power / 10.0 ** (self.snr_db / 10.0)

    @property
    def noise_var_feedback(self) -> float:
        if self.snr_fb_db is None:
            return 0.0
        return self.power / 10.0 ** (self.snr_fb_db / 10.0)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(d_s=4, d_m=self.d_m, q=self.q_tx,
                             k_max=self.n_interactions, masked=True)

    def decoder_config(self) -> EncoderConfig:
        return EncoderConfig(d_s=3, d_m=self.d_m, q=self.q_rx,
                             k_max=self.n_interactions, masked=False)


@dataclass(frozen=True)
class CodecModel:
    """Transmitter and receiver stacks trained together."""

    encoder: ModelParams
    decoder: ModelParams

    def named_tensors(self):
        for name, value in self.encoder.named_tensors():
            yield "enc." + name, value
        for name, value in self.decoder.named_tensors():
            yield "dec." + name, value

    def trainable_names(self) -> list[str]:
        return [n for n, _ in self.named_tensors() if not n.endswith("w_pos")]

    def with_tensors(self, tensors: dict[str, np.ndarray]) -> "CodecModel":
        enc = {k[4:]: v for k, v in tensors.items() if k.startswith("enc.")}
        dec = {k[4:]: v for k, v in tensors.items() if k.startswith("dec.")}
        return CodecModel(
            encoder=self.encoder.with_tensors(enc) if enc else self.encoder,
            decoder=self.decoder.with_tensors(dec) if dec else self.decoder,
        )


def init_codec(config: CodecConfig, rng: np.random.Generator) -> CodecModel:
    """Fresh model pair; the decoder head starts small so that random
    weights predict near even odds and the loss starts near log 2."""
    encoder = init_model_params(
        config.encoder_config(), head_rows=2, rng=rng,
        n_power_weights=2 * config.n_interactions,
    )
    decoder = init_model_params(config.decoder_config(), head_rows=1, rng=rng)
    decoder = decoder.with_tensors({"head": decoder.head * 0.2})
    return CodecModel(encoder=encoder, decoder=decoder)


@dataclass(frozen=True)
class CodecNoise:
    """Per-block channel noise, one row per interaction index.

    Forward entries have the receiver-side variance; feedback entries
    are zero when the feedback link is noiseless.
    """

    w0: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    w0p: np.ndarray
    w1p: np.ndarray
    w2p: np.ndarray


def draw_noise(config: CodecConfig, batch: int, rng: np.random.Generator) -> CodecNoise:
    shape = (batch, config.n_interactions)
    sf = np.sqrt(config.noise_var_forward)
    sb = np.sqrt(config.noise_var_feedback)
    forward = [rng.normal(0.0, sf, shape) for _ in range(3)]
    if sb > 0:
        feedback = [rng.normal(0.0, sb, shape) for _ in range(3)]
    else:
        feedback = [np.zeros(shape) for _ in range(3)]
    return CodecNoise(forward[0], forward[1], forward[2],
                      feedback[0], feedback[1], feedback[2])


def noise_slice(noise: CodecNoise, rows) -> CodecNoise:
    """The same noise realization restricted to a subset of blocks."""
    return CodecNoise(noise.w0[rows], noise.w1[rows], noise.w2[rows],
                      noise.w0p[rows], noise.w1p[rows], noise.w2p[rows])


def lift_tensors(ops, tensors: dict) -> dict:
    """Named arrays as ops values: leaves for trainables, constants for
    the position tables.  Power weights ride as a column so they can
    scale the (batch, 2, 1) symbol pairs."""
    lifted = {}
    for name, value in tensors.items():
        if name.endswith("power_weights"):
            value = value[:, None]
        if name.endswith("w_pos"):
            lifted[name] = ops.constant(value, name)
        else:
            lifted[name] = ops.leaf(value, name)
    return lifted


def lift_model(ops, model: CodecModel) -> dict:
    return lift_tensors(ops, dict(model.named_tensors()))


def collect_grads(lifted: dict) -> dict[str, np.ndarray]:
    """Gradients of every trainable leaf, shaped like the model tensors."""
    grads = {}
    for name, node in lifted.items():
        if name.endswith("w_pos"):
            continue
        grad = node.grad
        if grad is None:
            grad = np.zeros_like(node.value)
        if name.endswith("power_weights"):
            grad = grad[:, 0]
        grads[name] = grad
    return grads


def _run_stack(ops, h, lifted: dict, prefix: str, q: int, allowed: np.ndarray):
    """The shared pre-norm block pipeline plus final layer norm."""
    for i in range(q):
        p = f"{prefix}.blocks.{i}."
        ln1 = ops.layer_norm(h, lifted[p + "ln1_gain"], lifted[p + "ln1_bias"])
        queries = ops.matmul(lifted[p + "wq"], ln1)
        keys = ops.matmul(lifted[p + "wk"], ln1)
        values = ops.matmul(lifted[p + "wv"], ln1)
        scores = ops.matmul(keys, queries, ta=True)
        weights = ops.softmax_mask(scores, allowed)
        h2 = ops.add(ops.matmul(values, weights), h)
        ln2 = ops.layer_norm(h2, lifted[p + "ln2_gain"], lifted[p + "ln2_bias"])
        hidden = ops.relu(ops.matmul(lifted[p + "mlp_in"], ln2))
        h = ops.add(ops.matmul(lifted[p + "mlp_out"], hidden), h2)
    return ops.layer_norm(h, lifted[prefix + ".final_gain"],
                          lifted[prefix + ".final_bias"])


@dataclass
class CodecForward:
    """Values of one batched pass; loss is a tape node when recorded."""

    probs: np.ndarray
    loss: object
    tx_power: np.ndarray
    raw_pairs: np.ndarray


def codec_forward(
    ops,
    lifted: dict,
    bits: np.ndarray,
    noise: CodecNoise,
    config: CodecConfig,
    calibration: np.ndarray,
) -> CodecForward:
    """One batched pass of the full protocol.

    bits has shape (batch, K); calibration holds one fixed scale per
    phase-two real symbol and is treated as data, not differentiated.
    Returns per-bit probabilities with the padding position dropped.
    """
    bits = np.asarray(bits, dtype=np.float64)
    if bits.ndim != 2 or bits.shape[1] != config.n_bits:
        raise ConfigError("bits must be (batch, n_bits)")
    batch = bits.shape[0]
    kp1 = config.n_interactions
    if calibration.shape != (2 * kp1,):
        raise ConfigError("calibration must hold one entry per coded symbol")
    sqrt_p = np.sqrt(config.power)

    bits_pad = np.concatenate([bits, np.zeros((batch, 1))], axis=1)
    x0 = sqrt_p * (2.0 * bits_pad - 1.0)
    wbar0 = noise.w0 + noise.w0p

    enc_mask = [None] + [causal_mask(k).allowed() for k in range(1, kp1 + 1)]
    wbar1_hist = None
    wbar2_hist = None
    y1_cols = []
    y2_cols = []
    tx_power = np.zeros(2 * kp1)
    raw_pairs = np.zeros((batch, 2, kp1))

    for k in range(1, kp1 + 1):
        row0 = ops.constant(bits_pad[:, None, :k])
        row1 = ops.constant(wbar0[:, None, :k])
        zero_col = ops.constant(np.zeros((batch, 1, 1)))
        if k == 1:
            row2, row3 = zero_col, zero_col
        else:
            row2 = ops.concat([wbar1_hist, zero_col], axis=-1)
            row3 = ops.concat([wbar2_hist, zero_col], axis=-1)
        matrix = ops.concat([row0, row1, row2, row3], axis=-2)

        h1 = ops.add(ops.matmul(lifted["enc.embed"], matrix),
                     ops.constant(node_value(lifted["enc.w_pos"])[:, :k]))
        h = _run_stack(ops, h1, lifted, "enc", config.q_tx, enc_mask[k])
        h_last = ops.slice(h, (Ellipsis, slice(k - 1, k)))
        pair = ops.matmul(lifted["enc.head"], h_last)
        raw_pairs[:, :, k - 1] = node_value(pair)[:, :, 0]

        pw = ops.slice(lifted["enc.power_weights"],
                       (slice(2 * k - 2, 2 * k), slice(None)))
        cal_pair = calibration[2 * k - 2 : 2 * k, None]
        sym = ops.scale(ops.scale(ops.scale(pair, pw), cal_pair), sqrt_p)
        tx_power[2 * k - 2 : 2 * k] = (node_value(sym)[:, :, 0] ** 2).mean(axis=0)

        x1 = ops.slice(sym, (slice(None), slice(0, 1), slice(None)))
        x2 = ops.slice(sym, (slice(None), slice(1, 2), slice(None)))
        w1k = noise.w1[:, k - 1][:, None, None]
        w2k = noise.w2[:, k - 1][:, None, None]
        y1 = ops.add(x1, ops.constant(w1k))
        y2 = ops.add(x2, ops.constant(w2k))
        y1_cols.append(y1)
        y2_cols.append(y2)

        if k < kp1:
            w1p = ops.constant(noise.w1p[:, k - 1][:, None, None])
            w2p = ops.constant(noise.w2p[:, k - 1][:, None, None])
            wbar1 = ops.add(ops.add(y1, w1p), ops.scale(x1, -1.0))
            wbar2 = ops.add(ops.add(y2, w2p), ops.scale(x2, -1.0))
            wbar1_hist = wbar1 if wbar1_hist is None else ops.concat(
                [wbar1_hist, wbar1], axis=-1)
            wbar2_hist = wbar2 if wbar2_hist is None else ops.concat(
                [wbar2_hist, wbar2], axis=-1)

    row_y0 = ops.constant((x0 + noise.w0)[:, None, :])
    row_y1 = ops.concat(y1_cols, axis=-1)
    row_y2 = ops.concat(y2_cols, axis=-1)
    received = ops.concat([row_y0, row_y1, row_y2], axis=-2)

    h1 = ops.add(ops.matmul(lifted["dec.embed"], received),
                 ops.constant(node_value(lifted["dec.w_pos"])[:, :kp1]))
    h = _run_stack(ops, h1, lifted, "dec", config.q_rx, no_mask(kp1).allowed())
    logits = ops.matmul(lifted["dec.head"], h)
    probs = ops.logistic(ops.slice(logits, (Ellipsis, 0, slice(0, config.n_bits))))
    loss = ops.bce(probs, ops.constant(bits))

    return CodecForward(
        probs=node_value(probs),
        loss=loss,
        tx_power=tx_power,
        raw_pairs=raw_pairs,
    )


def calibrate(
    model: CodecModel,
    bits: np.ndarray,
    noise: CodecNoise,
    config: CodecConfig,
) -> np.ndarray:
    """Per-symbol scales making the raw head outputs unit mean square.

    Computed on a plain forward pass and then treated as constants, so
    gradients never flow through the power normalization itself; the
    trained power weights keep control of the relative allocation.
    """
    lifted = lift_model(Eager, model)
    ones = np.ones(2 * config.n_interactions)
    out = codec_forward(Eager, lifted, bits, noise, config, ones)
    ms = (out.raw_pairs**2).mean(axis=0).T.reshape(-1)
    return 1.0 / np.sqrt(ms + CAL_FLOOR)


def transmit_blocks(
    model: CodecModel,
    config: CodecConfig,
    calibration: np.ndarray,
    bits: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Send a batch of blocks through fresh channel noise; returns the
    receiver's per-bit probabilities."""
    noise = draw_noise(config, bits.shape[0], rng)
    lifted = lift_model(Eager, model)
    out = codec_forward(Eager, lifted, bits, noise, config, calibration)
    return out.probs


def project_power_weights(model: CodecModel) -> CodecModel:
    """Renormalize the transmitter's power weights to mean square one."""
    weights = renormalize_power_weights(model.encoder.power_weights)
    return CodecModel(
        encoder=model.encoder.with_tensors({"power_weights": weights}),
        decoder=model.decoder,
    )

"""Forward computation of the attention-based feedback code.

A small single-head transformer encoder operating on short sequences:
linear embedding plus a fixed sinusoidal position table, a stack of
pre-normalized blocks (masked self-attention, then a ReLU MLP, each
with a residual connection), a final layer norm and a linear head.
The same machinery serves the transmitter (4-row inputs, 2-row head,
causal mask) and the receiver (3-row inputs, 1-row head, no mask).

Everything here is plain float64 numpy on single examples; the
training module re-expresses the identical pipeline on its gradient
tape, and the two are cross-checked in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError

LN_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture hyperparameters for one attention stack."""

    d_s: int
    d_m: int = 32
    q: int = 2
    k_max: int = 51
    masked: bool = True
    with_csi: bool = False

    def __post_init__(self) -> None:
        if self.d_m < self.d_s:
            raise ConfigError("d_m must be >= d_s")
        if self.q < 1:
            raise ConfigError("need at least one encoding block")
        if self.d_m % 2 != 0:
            raise ConfigError("d_m must be even for the sinusoidal table")
        if self.k_max < 1:
            raise ConfigError("k_max must be >= 1")


@dataclass(frozen=True)
class Mask:
    """Attention mask over a length-k sequence.

    ``allowed[j, i]`` says whether the value at position j may feed the
    output at position i.  The causal kind passes j <= i only.
    """

    size: int
    kind: str = "causal"
    custom: np.ndarray | None = None

    def allowed(self) -> np.ndarray:
        if self.kind == "causal":
            return np.triu(np.ones((self.size, self.size), dtype=bool))
        if self.kind == "none":
            return np.ones((self.size, self.size), dtype=bool)
        if self.kind == "custom":
            if self.custom is None or self.custom.shape != (self.size, self.size):
                raise ConfigError("custom mask needs a (size, size) boolean matrix")
            return self.custom.astype(bool)
        raise ConfigError(f"unknown mask kind: {self.kind}")


def causal_mask(size: int) -> Mask:
    return Mask(size=size, kind="causal")


def no_mask(size: int) -> Mask:
    return Mask(size=size, kind="none")


# ---------------------------------------------------------------------------
# Parameters


@dataclass(frozen=True)
class BlockParams:
    """Weights of one pre-norm encoding block."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    mlp_in: np.ndarray
    mlp_out: np.ndarray
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray


@dataclass(frozen=True)
class ModelParams:
    """All weights of one attention stack.

    ``w_pos`` is the fixed sinusoidal table and is never trained.
    ``power_weights`` exist on transmitter models only and hold one
    weight per real channel symbol.
    """

    config: EncoderConfig
    embed: np.ndarray
    w_pos: np.ndarray
    blocks: tuple[BlockParams, ...]
    final_gain: np.ndarray
    final_bias: np.ndarray
    head: np.ndarray
    csi_linear: np.ndarray | None = None
    power_weights: np.ndarray | None = None

    def named_tensors(self):
        """Yield (name, array) for every trainable tensor plus w_pos."""
        yield "embed", self.embed
        yield "w_pos", self.w_pos
        for i, b in enumerate(self.blocks):
            for leaf in (
                "wq", "wk", "wv", "mlp_in", "mlp_out",
                "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias",
            ):
                yield f"blocks.{i}.{leaf}", getattr(b, leaf)
        yield "final_gain", self.final_gain
        yield "final_bias", self.final_bias
        yield "head", self.head
        if self.csi_linear is not None:
            yield "csi_linear", self.csi_linear
        if self.power_weights is not None:
            yield "power_weights", self.power_weights

    def trainable_names(self) -> list[str]:
        return [name for name, _ in self.named_tensors() if name != "w_pos"]

    def with_tensors(self, tensors: dict[str, np.ndarray]) -> "ModelParams":
        """Return a copy with the named tensors replaced."""
        blocks = []
        for i, b in enumerate(self.blocks):
            updates = {}
            for leaf in (
                "wq", "wk", "wv", "mlp_in", "mlp_out",
                "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias",
            ):
                key = f"blocks.{i}.{leaf}"
                if key in tensors:
                    updates[leaf] = tensors[key]
            blocks.append(replace(b, **updates) if updates else b)
        top = {}
        for name in ("embed", "w_pos", "final_gain", "final_bias", "head",
                     "csi_linear", "power_weights"):
            if name in tensors:
                top[name] = tensors[name]
        return replace(self, blocks=tuple(blocks), **top)


def init_model_params(
    config: EncoderConfig,
    head_rows: int,
    rng: np.random.Generator,
    n_power_weights: int | None = None,
) -> ModelParams:
    """Random initialization: scaled Gaussians, unit layer-norm gains."""
    d_m, d_s = config.d_m, config.d_s

    def mat(rows, cols):
        return rng.normal(0.0, 1.0 / np.sqrt(cols), (rows, cols))

    blocks = tuple(
        BlockParams(
            wq=mat(d_m, d_m),
            wk=mat(d_m, d_m),
            wv=mat(d_m, d_m),
            mlp_in=mat(4 * d_m, d_m),
            mlp_out=mat(d_m, 4 * d_m),
            ln1_gain=np.ones(d_m),
            ln1_bias=np.zeros(d_m),
            ln2_gain=np.ones(d_m),
            ln2_bias=np.zeros(d_m),
        )
        for _ in range(config.q)
    )
    return ModelParams(
        config=config,
        embed=mat(d_m, d_s),
        w_pos=positional_encoding(d_m, config.k_max),
        blocks=blocks,
        final_gain=np.ones(d_m),
        final_bias=np.zeros(d_m),
        head=mat(head_rows, d_m),
        csi_linear=mat(d_m, 6) if config.with_csi else None,
        power_weights=(
            np.ones(n_power_weights) if n_power_weights is not None else None
        ),
    )


# ---------------------------------------------------------------------------
# Input construction


@dataclass(frozen=True)
class FeatureMatrix:
    """A d_s-by-k input whose first row carries the bit values."""

    values: np.ndarray

    def __post_init__(self) -> None:
        bits_row = self.values[0]
        if not np.all((bits_row == 0.0) | (bits_row == 1.0)):
            raise ConfigError("first feature row must hold bits in {0, 1}")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


def _check_history(bits, noise_history, k):
    bits = np.asarray(bits, dtype=np.float64)
    noise = np.asarray(noise_history, dtype=np.float64)
    if noise.ndim != 2 or noise.shape[0] != 3:
        raise ConfigError("noise_history must have three rows")
    if not 1 <= k <= len(bits) or noise.shape[1] < k:
        raise ConfigError("k out of range for the supplied histories")
    return bits, noise


def build_input_legacy(bits, noise_history, k: int) -> FeatureMatrix:
    """Transmitter input with phase-2 noise delayed by one column.

    Row 0: bits 1..k.  Row 1: first-phase feedback noises 1..k.  Rows
    2-3: second-phase feedback noises 1..k-1, shifted right one column
    so column j describes what was known before interaction j.
    """
    bits, noise = _check_history(bits, noise_history, k)
    values = np.zeros((4, k))
    values[0] = bits[:k]
    values[1] = noise[0, :k]
    values[2, 1:] = noise[1, : k - 1]
    values[3, 1:] = noise[2, : k - 1]
    return FeatureMatrix(values)


def build_input_restructured(bits, noise_history, k: int) -> FeatureMatrix:
    """Transmitter input with each bit's noises aligned in one column.

    Columns 1..k-1 carry [bit, first-phase noise, both second-phase
    noises] of that interaction; the last column has only the new bit
    and its first-phase noise, with zeros below.
    """
    bits, noise = _check_history(bits, noise_history, k)
    values = np.zeros((4, k))
    values[0] = bits[:k]
    values[1] = noise[0, :k]
    values[2, : k - 1] = noise[1, : k - 1]
    values[3, : k - 1] = noise[2, : k - 1]
    return FeatureMatrix(values)


def build_input_fading(bits, normalized_noise_history, k: int) -> FeatureMatrix:
    """Fading-mode transmitter input.

    Identical layout to the restructured matrix; the caller supplies
    noise realizations already normalized by the fading coefficients
    (what the transmitter actually extracts from passive feedback).
    """
    return build_input_restructured(bits, normalized_noise_history, k)


def zero_pad(bits) -> np.ndarray:
    """Append one zero bit; the pad is excluded from error accounting."""
    bits = np.atleast_1d(np.asarray(bits))
    return np.concatenate([bits, [0]]).astype(bits.dtype)


def renormalize_power_weights(weights) -> np.ndarray:
    """Scale so the mean square is exactly 1."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size == 0:
        raise ConfigError("power weights must be nonempty")
    ms = float(np.mean(weights**2))
    if ms == 0.0:
        raise ConfigError("power weights must not be all zero")
    return weights / np.sqrt(ms)


# ---------------------------------------------------------------------------
# Core layers


def positional_encoding(d_m: int, k_max: int) -> np.ndarray:
    """Sinusoidal position table, d_m rows by k_max columns.

    Row 2i holds sin(pos / 10000^(2i/d_m)) and row 2i+1 the matching
    cosine; the table is fixed, never trained.
    """
    if d_m % 2 != 0:
        raise ConfigError("d_m must be even")
    pos = np.arange(k_max, dtype=np.float64)
    i2 = np.arange(0, d_m, 2, dtype=np.float64)
    angles = pos[None, :] / (10000.0 ** (i2[:, None] / d_m))
    table = np.zeros((d_m, k_max))
    table[0::2] = np.sin(angles)
    table[1::2] = np.cos(angles)
    return table


def layer_norm(h: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Column-wise normalization followed by a per-row affine map."""
    if h.shape[0] < 2:
        raise ConfigError("layer norm needs at least two rows per column")
    mean = h.mean(axis=0, keepdims=True)
    var = h.var(axis=0, keepdims=True)
    normed = (h - mean) / np.sqrt(var + LN_EPS)
    return gain[:, None] * normed + bias[:, None]


def self_attention(
    j_mat: np.ndarray,
    wq: np.ndarray,
    wk: np.ndarray,
    wv: np.ndarray,
    mask: Mask,
) -> np.ndarray:
    """Single-head attention over the columns of a d_m-by-k matrix.

    Scores pair every query column with every key column; blocked pairs
    are driven to minus infinity before the column-wise softmax, so
    they carry exactly zero weight, and each output column is the
    weight-averaged mix of the value columns it may see.
    """
    k = j_mat.shape[1]
    if mask.size != k:
        raise ConfigError("mask size does not match sequence length")
    allowed = mask.allowed()
    if not np.all(allowed.any(axis=0)):
        raise ConfigError("mask blocks every position for some column")
    queries = wq @ j_mat
    keys = wk @ j_mat
    values = wv @ j_mat
    scores = keys.T @ queries
    scores = np.where(allowed, scores, -np.inf)
    scores = scores - scores.max(axis=0, keepdims=True)
    weights = np.exp(scores)
    weights = weights / weights.sum(axis=0, keepdims=True)
    return values @ weights


def encoding_block(h: np.ndarray, block: BlockParams, mask: Mask) -> np.ndarray:
    """One pre-norm block: attention residual, then MLP residual."""
    attended = self_attention(
        layer_norm(h, block.ln1_gain, block.ln1_bias),
        block.wq, block.wk, block.wv, mask,
    )
    h2 = attended + h
    hidden = np.maximum(block.mlp_in @ layer_norm(h2, block.ln2_gain, block.ln2_bias), 0.0)
    return block.mlp_out @ hidden + h2


def embed_sequence(
    matrix: FeatureMatrix,
    params: ModelParams,
    csi_feat: np.ndarray | None = None,
) -> np.ndarray:
    """Linear embedding plus positions, plus the CSI bias when enabled."""
    k = matrix.cols
    if k > params.config.k_max:
        raise ConfigError("sequence longer than the position table")
    h1 = params.embed @ matrix.values + params.w_pos[:, :k]
    if params.config.with_csi:
        if csi_feat is None:
            raise ConfigError("model expects a CSI feature vector")
        h1 = h1 + (params.csi_linear @ np.asarray(csi_feat))[:, None]
    elif csi_feat is not None:
        raise ConfigError("model was built without CSI support")
    return h1


def run_stack(h1: np.ndarray, params: ModelParams) -> np.ndarray:
    """Apply all encoding blocks and the final layer norm."""
    k = h1.shape[1]
    mask = causal_mask(k) if params.config.masked else no_mask(k)
    h = h1
    for block in params.blocks:
        h = encoding_block(h, block, mask)
    return layer_norm(h, params.final_gain, params.final_bias)


def encode_step(
    bits,
    noise_history,
    k: int,
    params: ModelParams,
    csi_feat: np.ndarray | None = None,
) -> np.ndarray:
    """Produce the two coded symbols of interaction k (before power scaling).

    Builds the aligned input matrix from everything the transmitter has
    seen through interaction k, runs the masked stack, reads the head
    off the last column, and applies this interaction's two entries of
    the power weight vector.
    """
    builder = build_input_fading if csi_feat is not None else build_input_restructured
    matrix = builder(bits, noise_history, k)
    h = run_stack(embed_sequence(matrix, params, csi_feat), params)
    pair = params.head @ h[:, -1]
    if params.power_weights is not None:
        pair = pair * params.power_weights[2 * k - 2 : 2 * k]
    return pair


def decode(
    received: np.ndarray,
    params: ModelParams,
    csi_feat: np.ndarray | None = None,
) -> np.ndarray:
    """Per-bit probabilities from the three received sequences.

    ``received`` has one row per receive phase and K+1 columns.  The
    final (padding) position's output is dropped; entry k of the result
    is the probability that bit k+1 was a one.
    """
    received = np.asarray(received, dtype=np.float64)
    if received.ndim != 2 or received.shape[0] != params.config.d_s:
        raise ConfigError("received matrix must be d_s by K+1")
    h1 = params.embed @ received + params.w_pos[:, : received.shape[1]]
    if params.config.with_csi:
        if csi_feat is None:
            raise ConfigError("model expects a CSI feature vector")
        h1 = h1 + (params.csi_linear @ np.asarray(csi_feat))[:, None]
    h = run_stack(h1, params)
    logits = (params.head @ h)[0]
    probs = _logistic(logits)
    return probs[:-1]


def _logistic(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out

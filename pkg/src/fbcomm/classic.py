"""Classic linear feedback coding schemes over the scalar AWGN channel.

Contains the pulse-amplitude constellation with Gray-coded bit mapping,
the iterative estimate-refinement scheme driven by noiseless feedback,
and its modulo-arithmetic variant that keeps working when the feedback
link itself is noisy.  All signals here are real; noise variances are
per real symbol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from .channel import ChannelParams
from .errors import ConfigError

_MAX_MATERIALIZED_K = 22


def q_function(x) -> np.ndarray | float:
    """Standard Gaussian tail probability Q(x)."""
    return 0.5 * erfc(np.asarray(x) / math.sqrt(2.0))


# ---------------------------------------------------------------------------
# PAM constellation


@dataclass(frozen=True)
class PamConstellation:
    """Unit-power 2^K-ary amplitude constellation with Gray labeling.

    Levels are the odd multiples of the normalization factor xi, chosen
    so the uniform average of squared levels is exactly 1.
    """

    k_bits: int

    def __post_init__(self) -> None:
        if self.k_bits < 1:
            raise ConfigError("k_bits must be >= 1")

    @property
    def size(self) -> int:
        return 1 << self.k_bits

    @property
    def xi(self) -> float:
        """Spacing factor sqrt(3 / (4^K - 1)); adjacent levels sit 2*xi apart."""
        return math.sqrt(3.0 / (4.0**self.k_bits - 1.0))

    @property
    def levels(self) -> np.ndarray:
        """All levels in ascending order.

        Only available for K small enough to materialize; mapping and
        demapping never need this vector and work for any K up to 50
        via index arithmetic.
        """
        if self.k_bits > _MAX_MATERIALIZED_K:
            raise ConfigError(
                f"refusing to materialize 2^{self.k_bits} levels; "
                "use pam_map/pam_demap which operate on indices"
            )
        idx = np.arange(self.size, dtype=np.int64)
        return (2 * idx - (self.size - 1)) * self.xi

    def level_of_index(self, idx) -> np.ndarray:
        """Level value for ascending level index, without materializing."""
        idx = np.asarray(idx, dtype=np.float64)
        return (2.0 * idx - (self.size - 1.0)) * self.xi


def _gray_encode(idx: np.ndarray) -> np.ndarray:
    return idx ^ (idx >> np.uint64(1))


def _gray_decode(code: np.ndarray) -> np.ndarray:
    out = code.copy()
    shift = 1
    while shift < 64:
        out = out ^ (out >> np.uint64(shift))
        shift *= 2
    return out


def _bits_to_uint(bits: np.ndarray) -> np.ndarray:
    """Rows of 0/1 bits (most significant first) to uint64."""
    bits = np.asarray(bits, dtype=np.uint64)
    k = bits.shape[-1]
    weights = np.uint64(1) << np.arange(k - 1, -1, -1, dtype=np.uint64)
    return (bits * weights).sum(axis=-1, dtype=np.uint64)


def _uint_to_bits(values: np.ndarray, k: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.uint64)
    shifts = np.arange(k - 1, -1, -1, dtype=np.uint64)
    return ((values[..., None] >> shifts) & np.uint64(1)).astype(np.int8)


def pam_map(bits) -> float:
    """Map a K-bit word to its constellation point.

    The bit pattern is read as a Gray code of the ascending level index,
    so words that differ in one bit always land on adjacent levels.
    """
    bits = np.atleast_1d(np.asarray(bits))
    return float(pam_map_batch(bits[None, :])[0])


def pam_map_batch(bits: np.ndarray) -> np.ndarray:
    """Vectorized mapper: (T, K) bit matrix to (T,) level values."""
    bits = np.asarray(bits)
    k = bits.shape[-1]
    if k < 1 or k > 50:
        raise ConfigError("word length must be in [1, 50]")
    const = PamConstellation(k)
    idx = _gray_decode(_bits_to_uint(bits))
    return const.level_of_index(idx.astype(np.float64))


def pam_demap(theta_hat: float, constellation: PamConstellation) -> np.ndarray:
    """Minimum-distance decode of a single estimate to its bit word.

    Exact midpoints between adjacent levels go to the smaller level.
    """
    out = pam_demap_batch(np.asarray([theta_hat]), constellation.k_bits)
    return out[0]


def pam_demap_batch(theta_hat: np.ndarray, k_bits: int) -> np.ndarray:
    """Vectorized decoder: (T,) estimates to (T, K) bit matrix."""
    const = PamConstellation(k_bits)
    t = (np.asarray(theta_hat, dtype=np.float64) / const.xi + (const.size - 1.0)) / 2.0
    # ceil(t - 1/2) rounds to nearest with exact halves going down,
    # which implements the tie-toward-smaller-level rule.
    idx = np.ceil(t - 0.5)
    idx = np.clip(idx, 0.0, float(const.size - 1))
    return _uint_to_bits(_gray_encode(idx.astype(np.uint64)), k_bits)


# ---------------------------------------------------------------------------
# Modulo arithmetic


def mod_op(x, d: float):
    """Centered modulo: x minus the nearest multiple of d.

    Halves round up so the image is exactly [-d/2, d/2).
    """
    if d <= 0:
        raise ConfigError("modulo width d must be positive")
    x = np.asarray(x, dtype=np.float64)
    out = x - d * np.floor(x / d + 0.5)
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# The iterative feedback scheme


@dataclass(frozen=True)
class SkTrace:
    """Per-round diagnostics of a single coded transmission.

    estimates[n] is the receiver estimate after round n+1, error_vars
    the scheduled estimation-error variances, transmitted_powers the
    squared channel inputs of node A, and feedback_symbols the symbols
    node B sent back (modulo variant only).
    """

    estimates: np.ndarray
    error_vars: np.ndarray
    transmitted_powers: np.ndarray
    feedback_symbols: np.ndarray | None = None


def sk_variance_schedule(power: float, sigma2_f: float, n_rounds: int) -> np.ndarray:
    """Estimation-error variances after each round under noiseless feedback.

    Starts at sigma2_f / P after the first transmission and shrinks by
    the factor sigma2_f / (sigma2_f + P) per interaction, the value the
    receiver's linear correction attains.
    """
    if power <= 0 or n_rounds < 1:
        raise ConfigError("need power > 0 and n_rounds >= 1")
    if sigma2_f < 0:
        raise ConfigError("sigma2_f must be nonnegative")
    if sigma2_f == 0.0:
        return np.zeros(n_rounds)
    ratio = sigma2_f / (sigma2_f + power)
    return (sigma2_f / power) * ratio ** np.arange(n_rounds)


def sk_bler_analytic(
    k_bits: int, n_rounds: int, power: float, sigma2_f: float
) -> float:
    """Closed-form block error rate under noiseless feedback.

    The terminal estimate is the true point plus Gaussian error of
    variance eps2_N, so a block error is a nearest-neighbor event:
    2 (1 - 2^-K) Q(xi / eps_N).
    """
    if sigma2_f == 0.0:
        return 0.0
    const = PamConstellation(k_bits)
    eps = math.sqrt(sk_variance_schedule(power, sigma2_f, n_rounds)[-1])
    return float(2.0 * (1.0 - 2.0**-k_bits) * q_function(const.xi / eps))


def _sk_core(
    theta: np.ndarray,
    n_rounds: int,
    params: ChannelParams,
    rng: np.random.Generator,
    feedback_noisy: bool,
    collect: bool,
):
    """Shared vectorized loop; theta has shape (T,)."""
    power = params.power_a
    sigma2_f = params.sigma2_f
    sigma2_b = params.sigma2_b if feedback_noisy else 0.0
    sqrt_p = math.sqrt(power)
    n_trials = theta.shape[0]
    eps2 = sk_variance_schedule(power, sigma2_f, n_rounds)

    estimates = np.empty((n_rounds, n_trials)) if collect else None
    powers = np.empty(n_rounds) if collect else None

    x = sqrt_p * theta
    y = x + _noise(rng, sigma2_f, n_trials)
    theta_hat = y / sqrt_p
    if collect:
        estimates[0] = theta_hat
        powers[0] = float(np.mean(x * x))

    gain = sqrt_p / (sigma2_f + power)
    for n in range(1, n_rounds):
        observed = theta_hat
        if sigma2_b > 0.0:
            observed = theta_hat + _noise(rng, sigma2_b, n_trials)
        u = observed - theta
        scale = math.sqrt(power / eps2[n - 1]) if eps2[n - 1] > 0 else 0.0
        x = scale * u
        y = x + _noise(rng, sigma2_f, n_trials)
        theta_hat = theta_hat - gain * math.sqrt(eps2[n - 1]) * y
        if collect:
            estimates[n] = theta_hat
            powers[n] = float(np.mean(x * x))
    return theta_hat, eps2, estimates, powers


def _noise(rng: np.random.Generator, variance: float, size: int) -> np.ndarray:
    if variance == 0.0:
        return np.zeros(size)
    return rng.normal(0.0, math.sqrt(variance), size)


def sk_run(
    bits,
    n_rounds: int,
    params: ChannelParams,
    rng: np.random.Generator,
    feedback_noisy: bool = False,
) -> tuple[np.ndarray, SkTrace]:
    """Run one block through the iterative feedback scheme.

    Node A first sends the scaled constellation point, then on every
    interaction rescales node B's current estimation error back up to
    full power; node B applies its linear correction.  After n_rounds
    forward uses the estimate is decoded by minimum distance.  With
    ``feedback_noisy`` node A sees the estimate through the noisy
    feedback link instead of exactly.
    """
    bits = np.atleast_1d(np.asarray(bits))
    theta = pam_map_batch(bits[None, :])
    theta_hat, eps2, estimates, powers = _sk_core(
        theta, n_rounds, params, rng, feedback_noisy, collect=True
    )
    decoded = pam_demap_batch(theta_hat, bits.shape[-1])[0]
    trace = SkTrace(
        estimates=estimates[:, 0], error_vars=eps2, transmitted_powers=powers
    )
    return decoded, trace


def sk_run_batch(
    bits: np.ndarray,
    n_rounds: int,
    params: ChannelParams,
    rng: np.random.Generator,
    feedback_noisy: bool = False,
) -> np.ndarray:
    """Decode many independent blocks at once; returns a (T, K) bit matrix."""
    bits = np.asarray(bits)
    theta = pam_map_batch(bits)
    theta_hat, _, _, _ = _sk_core(
        theta, n_rounds, params, rng, feedback_noisy, collect=False
    )
    return pam_demap_batch(theta_hat, bits.shape[-1])


def sk_run_batch_full(
    bits: np.ndarray,
    n_rounds: int,
    params: ChannelParams,
    rng: np.random.Generator,
    feedback_noisy: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch run that also returns per-round estimates and mean powers.

    Returns (decoded (T,K), estimates (n_rounds, T), mean_powers (n_rounds,)).
    """
    bits = np.asarray(bits)
    theta = pam_map_batch(bits)
    theta_hat, _, estimates, powers = _sk_core(
        theta, n_rounds, params, rng, feedback_noisy, collect=True
    )
    return pam_demap_batch(theta_hat, bits.shape[-1]), estimates, powers


# ---------------------------------------------------------------------------
# Modulo variant


@dataclass(frozen=True)
class ModSkSchedule:
    """Fixed per-round coefficients for the modulo feedback scheme.

    gammas[i] scales the estimate node B wraps and sends on interaction
    i+1; betas[i] is node B's correction gain for the following forward
    symbol; alpha rescales the wrapped error at node A.  d is the
    modulo interval width, sqrt(12 P') when auto-built so a wrapped
    symbol meets node B's power budget.
    """

    alpha: float
    gammas: np.ndarray
    betas: np.ndarray
    d: float
    use_dither: bool = False
    error_vars: np.ndarray = field(default=None)  # type: ignore[assignment]
    aliasing_prob: float = 0.0
    aliasing_warning: bool = False

    @property
    def n_rounds(self) -> int:
        return len(self.gammas) + 1


def modsk_default_schedule(
    params: ChannelParams,
    n_rounds: int,
    safety_factor: float = 1.0 / 3.0,
    use_dither: bool = False,
    aliasing_target: float = 1e-6,
) -> ModSkSchedule:
    """Build the default modulo schedule for the given channel.

    Node B wraps gamma_n times its estimate with gamma_n chosen so the
    pre-wrap statistic at node A has standard deviation safety_factor
    times sqrt(P'), keeping wrap-around (aliasing) events rare.  alpha
    restores node A's power budget and each beta is the linear
    least-squares gain for the resulting observation, whose tracked
    error variances the schedule carries.
    """
    if n_rounds < 1:
        raise ConfigError("n_rounds must be >= 1")
    if not 0 < safety_factor <= 1:
        raise ConfigError("safety_factor must be in (0, 1]")
    p_a, p_b = params.power_a, params.power_b
    s2f, s2b = params.sigma2_f, params.sigma2_b
    d = math.sqrt(12.0 * p_b)
    c2pb = safety_factor**2 * p_b
    alpha = math.sqrt(p_a / (c2pb + s2b))

    eps2 = np.zeros(n_rounds)
    gammas = np.zeros(max(n_rounds - 1, 0))
    betas = np.zeros(max(n_rounds - 1, 0))
    eps2[0] = s2f / p_a
    for n in range(n_rounds - 1):
        e2 = eps2[n]
        gammas[n] = safety_factor * math.sqrt(p_b) / math.sqrt(e2) if e2 > 0 else 0.0
        signal = alpha**2 * gammas[n] ** 2 * e2
        denom = signal + alpha**2 * s2b + s2f
        betas[n] = alpha * gammas[n] * e2 / denom if denom > 0 else 0.0
        eps2[n + 1] = e2 * (1.0 - signal / denom) if denom > 0 else 0.0

    # Pre-wrap statistic at node A is Gaussian with variance c^2 P' + s2b.
    pre_wrap_std = math.sqrt(c2pb + s2b)
    aliasing = float(2.0 * q_function((d / 2.0) / pre_wrap_std))
    return ModSkSchedule(
        alpha=alpha,
        gammas=gammas,
        betas=betas,
        d=d,
        use_dither=use_dither,
        error_vars=eps2,
        aliasing_prob=aliasing,
        aliasing_warning=aliasing > aliasing_target,
    )


def _modsk_core(
    theta: np.ndarray,
    params: ChannelParams,
    schedule: ModSkSchedule,
    rng: np.random.Generator,
    collect: bool,
):
    power = params.power_a
    sigma2_f, sigma2_b = params.sigma2_f, params.sigma2_b
    sqrt_p = math.sqrt(power)
    n_trials = theta.shape[0]
    n_rounds = schedule.n_rounds
    d = schedule.d

    estimates = np.empty((n_rounds, n_trials)) if collect else None
    powers = np.empty(n_rounds) if collect else None
    fb_symbols = np.empty((n_rounds - 1, n_trials)) if collect else None

    x = sqrt_p * theta
    y = x + _noise(rng, sigma2_f, n_trials)
    theta_hat = y / sqrt_p
    if collect:
        estimates[0] = theta_hat
        powers[0] = float(np.mean(x * x))

    for n in range(n_rounds - 1):
        gamma = schedule.gammas[n]
        dither = (
            rng.uniform(-d / 2.0, d / 2.0, n_trials)
            if schedule.use_dither
            else 0.0
        )
        x_fb = mod_op(gamma * theta_hat + dither, d)
        y_fb = x_fb + _noise(rng, sigma2_b, n_trials)
        u = mod_op(y_fb - gamma * theta - dither, d)
        x = schedule.alpha * u
        y = x + _noise(rng, sigma2_f, n_trials)
        theta_hat = theta_hat - schedule.betas[n] * y
        if collect:
            fb_symbols[n] = x_fb
            estimates[n + 1] = theta_hat
            powers[n + 1] = float(np.mean(x * x))
    return theta_hat, estimates, powers, fb_symbols


def modsk_run(
    bits,
    n_rounds: int,
    params: ChannelParams,
    schedule: ModSkSchedule,
    rng: np.random.Generator,
) -> tuple[np.ndarray, SkTrace]:
    """Run one block through the modulo feedback scheme.

    Node B wraps its scaled estimate into [-d/2, d/2) before feeding it
    back; node A unwraps against the known message point, recovering the
    scaled estimation error plus feedback noise whenever no wrap-around
    occurred, and sends it rescaled.  Decoding is minimum distance after
    the last round.
    """
    bits = np.atleast_1d(np.asarray(bits))
    if schedule.n_rounds != n_rounds:
        raise ConfigError("schedule length does not match n_rounds")
    theta = pam_map_batch(bits[None, :])
    theta_hat, estimates, powers, fb = _modsk_core(
        theta, params, schedule, rng, collect=True
    )
    decoded = pam_demap_batch(theta_hat, bits.shape[-1])[0]
    trace = SkTrace(
        estimates=estimates[:, 0],
        error_vars=schedule.error_vars,
        transmitted_powers=powers,
        feedback_symbols=fb[:, 0] if fb is not None else None,
    )
    return decoded, trace


def modsk_run_batch(
    bits: np.ndarray,
    params: ChannelParams,
    schedule: ModSkSchedule,
    rng: np.random.Generator,
) -> np.ndarray:
    """Decode many independent blocks through the modulo scheme."""
    bits = np.asarray(bits)
    theta = pam_map_batch(bits)
    theta_hat, _, _, _ = _modsk_core(theta, params, schedule, rng, collect=False)
    return pam_demap_batch(theta_hat, bits.shape[-1])


def modsk_run_batch_full(
    bits: np.ndarray,
    params: ChannelParams,
    schedule: ModSkSchedule,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch modulo run returning (decoded, estimates (N, T), mean_powers)."""
    bits = np.asarray(bits)
    theta = pam_map_batch(bits)
    theta_hat, estimates, powers, _ = _modsk_core(
        theta, params, schedule, rng, collect=True
    )
    return pam_demap_batch(theta_hat, bits.shape[-1]), estimates, powers

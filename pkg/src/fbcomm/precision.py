"""Fixed-point emulation of the iterative feedback scheme.

Hardware with B-bit registers cannot run the variance-halving iteration
forever: once the estimation error shrinks below the quantization step,
the refinement stalls, and once the step exceeds the constellation
spacing the scheme cannot separate messages at all.  This module
quantizes every stored statistic of the scheme while leaving the
channel noise analog, so the breakdown is purely a register effect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelParams
from .classic import pam_demap_batch, pam_map_batch, sk_variance_schedule
from .errors import ConfigError

ALL_SITES = frozenset({"message", "estimate", "error", "tx", "rx"})


@dataclass(frozen=True)
class FixedPointFormat:
    """Signed fixed-point format with total_bits total and frac_bits fractional.

    Step size is 2^-frac_bits and the representable range runs from
    -2^(total_bits-frac_bits-1) up to the same magnitude minus one step.
    Out-of-range values saturate by default; with saturating=False they
    wrap around as two's-complement hardware would.
    """

    total_bits: int
    frac_bits: int
    saturating: bool = True

    def __post_init__(self) -> None:
        if not 2 <= self.total_bits <= 64:
            raise ConfigError("total_bits must be in [2, 64]")
        if not 0 <= self.frac_bits < self.total_bits:
            raise ConfigError("frac_bits must be in [0, total_bits)")

    @property
    def step(self) -> float:
        return 2.0 ** (-self.frac_bits)

    @property
    def min_value(self) -> float:
        return -(2.0 ** (self.total_bits - self.frac_bits - 1))

    @property
    def max_value(self) -> float:
        return -self.min_value - self.step


def quantize(x, fmt: FixedPointFormat):
    """Round to the nearest representable value, halves up.

    Saturating formats clip at the range edges; wrapping formats reduce
    the integer index modulo 2^total_bits.
    """
    x = np.asarray(x, dtype=np.float64)
    idx = np.floor(x / fmt.step + 0.5)
    lo = -(2.0 ** (fmt.total_bits - 1))
    hi = 2.0 ** (fmt.total_bits - 1) - 1.0
    if fmt.saturating:
        idx = np.clip(idx, lo, hi)
    else:
        span = 2.0**fmt.total_bits
        idx = np.mod(idx - lo, span) + lo
    out = idx * fmt.step
    if out.ndim == 0:
        return float(out)
    return out


def sk_run_quantized(
    bits,
    n_rounds: int,
    params: ChannelParams,
    fmt: FixedPointFormat,
    rng: np.random.Generator,
    sites=ALL_SITES,
    feedback_noisy: bool = False,
) -> np.ndarray:
    """Single-block run of the scheme on quantized registers."""
    bits = np.atleast_1d(np.asarray(bits))
    return sk_run_quantized_batch(
        bits[None, :], n_rounds, params, fmt, rng, sites, feedback_noisy
    )[0]


def sk_run_quantized_batch(
    bits: np.ndarray,
    n_rounds: int,
    params: ChannelParams,
    fmt: FixedPointFormat,
    rng: np.random.Generator,
    sites=ALL_SITES,
    feedback_noisy: bool = False,
    return_estimates: bool = False,
):
    """Vectorized quantized run over a (T, K) bit matrix.

    ``sites`` selects which stored statistics pass through the
    quantizer: "message" (the constellation point), "estimate" (the
    receiver estimate, including the copy the transmitter observes),
    "error" (the transmitter's error signal), "tx" (channel inputs) and
    "rx" (channel outputs as registered by the receiver).
    """
    sites = frozenset(sites)
    unknown = sites - ALL_SITES
    if unknown:
        raise ConfigError(f"unknown quantization sites: {sorted(unknown)}")

    def q(values, site):
        return quantize(values, fmt) if site in sites else values

    bits = np.asarray(bits)
    n_trials = bits.shape[0]
    power, sigma2_f = params.power_a, params.sigma2_f
    sigma2_b = params.sigma2_b if feedback_noisy else 0.0
    sqrt_p = math.sqrt(power)
    eps2 = sk_variance_schedule(power, sigma2_f, n_rounds)

    theta = q(pam_map_batch(bits), "message")
    x = q(sqrt_p * theta, "tx")
    y = q(x + _noise(rng, sigma2_f, n_trials), "rx")
    theta_hat = q(y / sqrt_p, "estimate")

    gain = sqrt_p / (sigma2_f + power)
    for n in range(1, n_rounds):
        observed = theta_hat
        if sigma2_b > 0.0:
            observed = q(theta_hat + _noise(rng, sigma2_b, n_trials), "estimate")
        u = q(observed - theta, "error")
        scale = math.sqrt(power / eps2[n - 1]) if eps2[n - 1] > 0 else 0.0
        x = q(scale * u, "tx")
        y = q(x + _noise(rng, sigma2_f, n_trials), "rx")
        theta_hat = q(theta_hat - gain * math.sqrt(eps2[n - 1]) * y, "estimate")
    decoded = pam_demap_batch(theta_hat, bits.shape[-1])
    if return_estimates:
        return decoded, theta_hat
    return decoded


def _noise(rng: np.random.Generator, variance: float, size: int) -> np.ndarray:
    if variance == 0.0:
        return np.zeros(size)
    return rng.normal(0.0, math.sqrt(variance), size)


@dataclass(frozen=True)
class PrecisionPoint:
    """One cell of a precision sweep."""

    k_bits: int
    total_bits: int
    frac_bits: int
    trials: int
    block_errors: int

    @property
    def bler(self) -> float:
        return self.block_errors / self.trials


def cell_rng(seed: int, k_bits: int, total_bits: int) -> np.random.Generator:
    """Deterministic per-cell generator for sweep reproducibility."""
    return np.random.default_rng([seed, k_bits, total_bits])


def precision_sweep(
    k_list,
    bits_list,
    params: ChannelParams,
    trials: int,
    seed: int = 0,
    n_rounds_factor: int = 3,
    int_bits: int = 4,
    feedback_noisy: bool = False,
) -> list[PrecisionPoint]:
    """Monte Carlo BLER over a (K, register width) grid.

    Each cell runs the quantized scheme for n_rounds_factor * K rounds
    with frac_bits = total_bits - int_bits, keeping a few integer bits
    of headroom above the unit-power signals.  Cells draw from
    independent generators keyed by (seed, K, width), so any single
    cell can be reproduced in isolation.
    """
    k_list = list(k_list)
    bits_list = list(bits_list)
    if not k_list or not bits_list:
        raise ConfigError("k_list and bits_list must be nonempty")
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    out = []
    for k in k_list:
        for total_bits in bits_list:
            if total_bits <= int_bits:
                raise ConfigError("total_bits must exceed int_bits")
            fmt = FixedPointFormat(total_bits, total_bits - int_bits)
            rng = cell_rng(seed, k, total_bits)
            bits = (rng.random((trials, k)) < 0.5).astype(np.int8)
            decoded = sk_run_quantized_batch(
                bits, n_rounds_factor * k, params, fmt, rng,
                feedback_noisy=feedback_noisy,
            )
            errors = int(np.sum(np.any(decoded != bits, axis=1)))
            out.append(
                PrecisionPoint(
                    k_bits=k,
                    total_bits=total_bits,
                    frac_bits=total_bits - int_bits,
                    trials=trials,
                    block_errors=errors,
                )
            )
    return out

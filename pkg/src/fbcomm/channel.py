"""Channel physics for the feedback workbench.

Models a feedforward link from node A to node B and a passive feedback
link from B back to A.  Both links add circularly symmetric complex
Gaussian noise; optionally each is scaled by a Rayleigh fading
coefficient that stays constant over a codeword.  Noise variances are
quoted per real component throughout, so a complex sample with variance
parameter v has total power 2v.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateFadingError

_COEFF_FLOOR = 1e-12


@dataclass(frozen=True)
class ChannelParams:
    """Static description of the two-way channel.

    sigma2_f / sigma2_b are per-component noise variances of the
    feedforward and feedback links.  rho_f / rho_b are the per-component
    standard deviations of the fading coefficients, so E|h|^2 = 2*rho_f**2.
    power_a / power_b are the average power budgets of the two nodes, and
    csi_error_var is the total variance of the additive error on the
    channel-state report handed to the nodes (0 means perfect knowledge).
    """

    sigma2_f: float = 1.0
    sigma2_b: float = 0.0
    rho_f: float = 1.0
    rho_b: float = 1.0
    power_a: float = 1.0
    power_b: float = 1.0
    csi_error_var: float = 0.0

    def __post_init__(self) -> None:
        if self.sigma2_f < 0 or self.sigma2_b < 0 or self.csi_error_var < 0:
            raise ConfigError("noise variances must be nonnegative")
        if self.power_a <= 0 or self.power_b <= 0:
            raise ConfigError("power budgets must be strictly positive")
        if self.rho_f <= 0 or self.rho_b <= 0:
            raise ConfigError("fading scales must be strictly positive")

    @property
    def snr_forward(self) -> float:
        """Feedforward SNR P / sigma2_f."""
        return self.power_a / self.sigma2_f

    @property
    def snr_feedback(self) -> float:
        """Feedback SNR P / sigma2_b (node A's power enters by convention)."""
        return self.power_a / self.sigma2_b

    @property
    def mean_snr_forward_faded(self) -> float:
        """Average received forward SNR 2*rho_f^2 * P / sigma2_f."""
        return 2.0 * self.rho_f**2 * self.snr_forward


def awgn_params(
    snr_db: float,
    snr_fb_db: float | None = None,
    power_a: float = 1.0,
    power_b: float = 1.0,
) -> ChannelParams:
    """Build parameters for the unfaded channel from SNRs in dB.

    ``snr_fb_db=None`` requests noiseless feedback (sigma2_b = 0).
    """
    sigma2_f = power_a / 10.0 ** (snr_db / 10.0)
    sigma2_b = 0.0 if snr_fb_db is None else power_a / 10.0 ** (snr_fb_db / 10.0)
    return ChannelParams(
        sigma2_f=sigma2_f, sigma2_b=sigma2_b, power_a=power_a, power_b=power_b
    )


@dataclass(frozen=True)
class Csi:
    """Channel-state information for one codeword.

    ``h`` scales the forward link and ``h_prime`` the feedback link.
    The reported copies are what the nodes actually see; they coincide
    with the true values when the report is noise free.
    """

    h: complex = 1.0 + 0.0j
    h_prime: complex = 1.0 + 0.0j
    reported_h: complex = field(default=None)  # type: ignore[assignment]
    reported_h_prime: complex = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.reported_h is None:
            object.__setattr__(self, "reported_h", self.h)
        if self.reported_h_prime is None:
            object.__setattr__(self, "reported_h_prime", self.h_prime)


AWGN_CSI = Csi(h=1.0 + 0.0j, h_prime=1.0 + 0.0j)


@dataclass(frozen=True)
class NoiseRealization:
    """One round's noise samples as seen from node A.

    ``aggregated`` is the effective noise A observes after the passive
    feedback normalization, i.e. the sum of the forward component and
    the feedback component referred to the forward link's input.
    """

    forward: complex
    feedback: complex
    aggregated: complex


def _complex_normal(rng: np.random.Generator, scale: float, size) -> np.ndarray:
    re = rng.normal(0.0, scale, size)
    im = rng.normal(0.0, scale, size)
    return re + 1j * im


def sample_fading(params: ChannelParams, rng: np.random.Generator) -> Csi:
    """Draw fading coefficients for one codeword.

    h and h_prime are circularly symmetric complex Gaussians with
    per-component variances rho_f^2 and rho_b^2.  When
    ``params.csi_error_var > 0`` the reported copies carry independent
    additive complex Gaussian errors of that total variance.
    """
    h = complex(_complex_normal(rng, params.rho_f, ()))
    h_prime = complex(_complex_normal(rng, params.rho_b, ()))
    if params.csi_error_var > 0.0:
        err_scale = math.sqrt(params.csi_error_var / 2.0)
        rep_h = h + complex(_complex_normal(rng, err_scale, ()))
        rep_hp = h_prime + complex(_complex_normal(rng, err_scale, ()))
    else:
        rep_h, rep_hp = h, h_prime
    return Csi(h=h, h_prime=h_prime, reported_h=rep_h, reported_h_prime=rep_hp)


def sample_fading_batch(
    params: ChannelParams, rng: np.random.Generator, count: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized version of :func:`sample_fading`.

    Returns arrays (h, h_prime, reported_h, reported_h_prime) of shape
    (count,), drawn with the same distributions as the scalar sampler.
    """
    h = _complex_normal(rng, params.rho_f, count)
    h_prime = _complex_normal(rng, params.rho_b, count)
    if params.csi_error_var > 0.0:
        err_scale = math.sqrt(params.csi_error_var / 2.0)
        rep_h = h + _complex_normal(rng, err_scale, count)
        rep_hp = h_prime + _complex_normal(rng, err_scale, count)
    else:
        rep_h, rep_hp = h.copy(), h_prime.copy()
    return h, h_prime, rep_h, rep_hp


def transmit(
    x: np.ndarray,
    coeff: complex,
    noise_var: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Send ``x`` through one link: returns coeff*x plus complex noise.

    ``noise_var`` is the per-component variance, so the additive noise
    has total power 2*noise_var per sample.  Pass coeff=h, noise_var =
    sigma2_f for the forward direction and coeff=h_prime, noise_var =
    sigma2_b for the feedback direction.
    """
    if noise_var < 0:
        raise ConfigError("noise_var must be nonnegative")
    x = np.asarray(x)
    if noise_var == 0.0:
        return coeff * x.astype(complex)
    w = _complex_normal(rng, math.sqrt(noise_var), x.shape)
    return coeff * x + w


def passive_feedback_noise(
    y_prime: np.ndarray, x: np.ndarray, csi: Csi
) -> np.ndarray:
    """Effective noise node A extracts from the passively fed back signal.

    Node A normalizes the feedback observation by its report of
    h_prime*h and subtracts what it sent, leaving the aggregated noise
    of both links referred to the forward input.  In the unfaded case
    this reduces to y_prime - x.
    """
    g = csi.reported_h_prime * csi.reported_h
    if abs(csi.reported_h) < _COEFF_FLOOR or abs(csi.reported_h_prime) < _COEFF_FLOOR:
        raise DegenerateFadingError("fading coefficient magnitude below 1e-12")
    return np.asarray(y_prime) / g - np.asarray(x)


def csi_features(csi: Csi, params: ChannelParams) -> np.ndarray:
    """Six real features summarizing the channel state for the neural code.

    Real and imaginary parts of both reported coefficients, followed by
    the two effective noise powers after feedback normalization:
    2*sigma2_f/|h|^2 and 2*sigma2_b/(|h|^2 |h_prime|^2).
    """
    h = csi.reported_h
    hp = csi.reported_h_prime
    if abs(h) < _COEFF_FLOOR or abs(hp) < _COEFF_FLOOR:
        raise DegenerateFadingError("fading coefficient magnitude below 1e-12")
    mag2_h = abs(h) ** 2
    mag2_hp = abs(hp) ** 2
    return np.array(
        [
            h.real,
            h.imag,
            hp.real,
            hp.imag,
            2.0 * params.sigma2_f / mag2_h,
            2.0 * params.sigma2_b / (mag2_h * mag2_hp),
        ]
    )


def check_power(codeword: np.ndarray, power: float, tolerance: float = 1e-6):
    """Measure average per-symbol power and compare against a budget.

    Returns (measured, ok) where measured is mean |x|^2 and ok is True
    when measured <= power*(1+tolerance).  Budget checks on learned
    codes pass a looser statistical tolerance.
    """
    codeword = np.asarray(codeword)
    if codeword.size == 0:
        raise ConfigError("codeword must be nonempty")
    measured = float(np.mean(np.abs(codeword) ** 2))
    return measured, measured <= power * (1.0 + tolerance)


@dataclass
class CsiEstimate:
    """Result of posterior maximization over the fading pair.

    Only the product h*h_prime is identifiable from the round trip, so
    the returned pair is one posterior-maximizing representative; its
    product is the quantity to trust.  ``converged`` reports whether the
    last refinement sweep still moved the objective.
    """

    csi: Csi
    objective: float
    converged: bool

    @property
    def product(self) -> complex:
        return self.csi.reported_h * self.csi.reported_h_prime


def _csi_log_objective(
    h_re, h_im, hp_re, hp_im, y_norm2, s, x_norm2, n_sym, params, var_floor
):
    """Log posterior (up to constants) on arrays of candidate coefficients.

    The likelihood sees the pair only through the product g = h*h_prime
    and the feedback-side noise scale |h_prime|^2, so the data residual
    is the quadratic ||y||^2 - 2 Re(conj(g) s) + |g|^2 ||x||^2.
    """
    h = h_re + 1j * h_im
    hp = hp_re + 1j * hp_im
    g = h * hp
    resid = y_norm2 - 2.0 * np.real(np.conj(g) * s) + np.abs(g) ** 2 * x_norm2
    var = np.abs(hp) ** 2 * params.sigma2_f + params.sigma2_b
    var = np.maximum(var, var_floor)
    loglik = -resid / (2.0 * var) - n_sym * np.log(var)
    logprior = -np.abs(h) ** 2 / (2.0 * params.rho_f**2)
    logprior = logprior - np.abs(hp) ** 2 / (2.0 * params.rho_b**2)
    return loglik + logprior


def _golden_section_max(fun, lo: float, hi: float, iters: int = 40):
    """Deterministic golden-section maximization on [lo, hi]."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fun(d)
    return (c, fc) if fc >= fd else (d, fd)


def map_estimate_csi(
    y_prime: np.ndarray,
    x: np.ndarray,
    params: ChannelParams,
    grid_points: int = 21,
    refine_steps: int = 50,
) -> CsiEstimate:
    """Posterior-maximizing fading estimate from a known pilot round trip.

    Searches a coarse grid of ``grid_points`` values per real dimension,
    spanning four prior standard deviations, then refines with
    coordinate-wise golden-section steps.  The returned objective is
    never below the best grid value.
    """
    y_prime = np.asarray(y_prime, dtype=complex).ravel()
    x = np.asarray(x, dtype=complex).ravel()
    if x.size < 2 or y_prime.size != x.size:
        raise ConfigError("pilot must have length >= 2 and match the observation")
    x_norm2 = float(np.sum(np.abs(x) ** 2))
    if x_norm2 == 0.0:
        raise ConfigError("pilot is all zeros, uninformative")
    y_norm2 = float(np.sum(np.abs(y_prime) ** 2))
    s = complex(np.sum(y_prime * np.conj(x)))
    n_sym = float(x.size)
    # Noise-variance floor keeps the objective finite on noiseless pilots.
    var_floor = 1e-9 * (x_norm2 / n_sym)

    def objective(h_re, h_im, hp_re, hp_im):
        return _csi_log_objective(
            h_re, h_im, hp_re, hp_im, y_norm2, s, x_norm2, n_sym, params, var_floor
        )

    ax_f = np.linspace(-4.0 * params.rho_f, 4.0 * params.rho_f, grid_points)
    ax_b = np.linspace(-4.0 * params.rho_b, 4.0 * params.rho_b, grid_points)
    # Evaluate on the 4-D product grid in one shot via broadcasting.
    hr = ax_f[:, None, None, None]
    hi = ax_f[None, :, None, None]
    pr = ax_b[None, None, :, None]
    pi = ax_b[None, None, None, :]
    vals = objective(hr, hi, pr, pi)
    best_flat = int(np.argmax(vals))
    idx = np.unravel_index(best_flat, vals.shape)
    point = [ax_f[idx[0]], ax_f[idx[1]], ax_b[idx[2]], ax_b[idx[3]]]
    best_val = float(vals[idx])

    spacing = [
        float(ax_f[1] - ax_f[0]),
        float(ax_f[1] - ax_f[0]),
        float(ax_b[1] - ax_b[0]),
        float(ax_b[1] - ax_b[0]),
    ]
    last_sweep_gain = math.inf
    for step in range(refine_steps):
        coord = step % 4
        if coord == 0:
            sweep_start = best_val
        half = spacing[coord]

        def along(t, _c=coord):
            trial = list(point)
            trial[_c] = t
            return float(objective(*trial))

        t_star, f_star = _golden_section_max(
            along, point[coord] - half, point[coord] + half
        )
        if f_star > best_val:
            point[coord] = t_star
            best_val = f_star
        spacing[coord] *= 0.8
        if coord == 3:
            last_sweep_gain = best_val - sweep_start
    converged = last_sweep_gain <= 1e-9 * (1.0 + abs(best_val))

    h = complex(point[0], point[1])
    hp = complex(point[2], point[3])
    csi = Csi(h=h, h_prime=hp, reported_h=h, reported_h_prime=hp)
    return CsiEstimate(csi=csi, objective=best_val, converged=converged)

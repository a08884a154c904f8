"""Monte Carlo experiment harness.

Estimates block and per-position bit error rates for every scheme in
the package, wraps them in Wilson confidence intervals, and runs
config-file-driven sweeps whose CSV and manifest outputs are
byte-reproducible (timing column aside).  Trials run in fixed-size
chunks; each chunk draws from a generator keyed by a content hash of
the experiment point plus the chunk index, so results do not depend on
sweep order or worker scheduling.
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import io
import itertools
import json
import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .channel import ChannelParams, awgn_params
from .classic import (
    modsk_default_schedule,
    modsk_run_batch,
    sk_run_batch,
)
from .codec import transmit_blocks
from .errors import ConfigError, NumericalFailure
from .serialization import load_checkpoint

SCHEMES = ("sk", "modulo-sk", "attention", "uncoded", "repetition")
UNIT_DELAY_SCHEMES = ("sk", "modulo-sk", "uncoded", "repetition")
CHUNK_TRIALS = 8192
CSV_COLUMNS = ("scheme", "K", "N", "eta_db", "eta_prime_db", "trials",
               "block_errors", "bler", "ci_low", "ci_high", "se", "seed",
               "wall_seconds")


def wilson_interval(errors: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    """95% (by default) Wilson score interval for an error proportion."""
    if trials < 1 or errors < 0 or errors > trials:
        raise ConfigError("need 0 <= errors <= trials with trials >= 1")
    p_hat = errors / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p_hat + z2 / (2.0 * trials)) / denom
    half = (z / denom) * math.sqrt(
        p_hat * (1.0 - p_hat) / trials + z2 / (4.0 * trials * trials)
    )
    # The exact bounds touch 0 and 1 at the empirical extremes; rounding
    # in the square root can land one ulp off either way, so pin them.
    lo = 0.0 if errors == 0 else max(0.0, center - half)
    hi = 1.0 if errors == trials else min(1.0, center + half)
    return lo, hi


def spectral_efficiency(p_b: float, k_bits: int, n_tilde: int) -> float:
    """Successfully delivered bits per channel interaction."""
    if not 0.0 <= p_b <= 1.0:
        raise ConfigError("p_b must lie in [0, 1]")
    if n_tilde < 1:
        raise ConfigError("n_tilde must be >= 1")
    return (1.0 - p_b) * k_bits / n_tilde


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte Carlo point (or the base of a sweep)."""

    scheme: str
    k_bits: int
    trials: int
    eta_db: float
    eta_prime_db: float | None = None
    n_uses: int | None = None
    rate: float | None = None
    power: float = 1.0
    seed: int = 0
    stop_at_errors: int | None = None
    scheme_config: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme: {self.scheme}")
        if self.k_bits < 1:
            raise ConfigError("K must be >= 1")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.stop_at_errors is not None and self.stop_at_errors < 1:
            raise ConfigError("stop_at_errors must be >= 1 when given")
        if self.n_uses is None and self.rate is None:
            raise ConfigError("provide N or the rate R")
        if self.n_uses is not None and self.rate is not None:
            if abs(self.k_bits / self.n_uses - self.rate) > 1e-9:
                raise ConfigError("K/N is inconsistent with R")
        if self.n_uses is not None and self.n_uses < 1:
            raise ConfigError("N must be >= 1")

    @property
    def resolved_n(self) -> int:
        if self.n_uses is not None:
            return self.n_uses
        return round(self.k_bits / self.rate)

    @property
    def resolved_rate(self) -> float:
        if self.rate is not None:
            return self.rate
        return self.k_bits / self.n_uses

    @property
    def n_tilde(self) -> int:
        """Interaction count for spectral efficiency: the block length for
        unit-delay schemes, interaction-pair accounting otherwise."""
        if self.scheme in UNIT_DELAY_SCHEMES:
            return self.resolved_n
        return math.ceil((self.k_bits + 1) / (2.0 * self.resolved_rate))

    def point_key(self) -> dict:
        """The fields that identify this point for seeding and manifests."""
        return {
            "scheme": self.scheme,
            "K": self.k_bits,
            "N": self.resolved_n,
            "eta_db": self.eta_db,
            "eta_prime_db": self.eta_prime_db,
            "power": self.power,
            "trials": self.trials,
            "seed": self.seed,
            "stop_at_errors": self.stop_at_errors,
            "scheme_config": self.scheme_config,
        }


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build a point config from the documented JSON key names."""
    known = {
        "scheme": "scheme", "K": "k_bits", "N": "n_uses", "R": "rate",
        "eta_db": "eta_db", "eta_prime_db": "eta_prime_db", "power": "power",
        "trials": "trials", "seed": "seed", "stop_at_errors": "stop_at_errors",
        "scheme_config": "scheme_config",
    }
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown config key: {key}")
        kwargs[known[key]] = value
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class McEstimate:
    """Monte Carlo error-rate estimate with its confidence interval."""

    trials: int
    block_errors: int
    bler: float
    ci_low: float
    ci_high: float
    bit_errors: np.ndarray
    wall_seconds: float

    def __post_init__(self) -> None:
        assert self.ci_low <= self.bler <= self.ci_high


def point_entropy(config: ExperimentConfig) -> list[int]:
    """Seed words from a content hash of the point, so reruns and sweep
    reorderings reproduce the same trials."""
    text = json.dumps(config.point_key(), sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(text.encode("ascii")).digest()
    return [int.from_bytes(digest[i : i + 4], "big") for i in range(0, 16, 4)]


def baseline_repetition(
    bits: np.ndarray,
    reps: int,
    params: ChannelParams,
    rng: np.random.Generator,
) -> np.ndarray:
    """No-feedback comparator: each bit rides reps antipodal symbols that
    are averaged before the sign decision.  The symbol amplitude spends
    the power of one complex channel use on one real symbol."""
    if reps < 1:
        raise ConfigError("reps must be >= 1")
    bits = np.asarray(bits)
    amplitude = math.sqrt(2.0 * params.power_a)
    x = amplitude * (2.0 * bits.astype(np.float64) - 1.0)
    total = np.zeros_like(x)
    sigma = math.sqrt(params.sigma2_f)
    for _ in range(reps):
        total += x + (rng.normal(0.0, sigma, x.shape) if sigma > 0 else 0.0)
    return (total / reps > 0.0).astype(bits.dtype)


class _PointRunner:
    """Resolves a config into a per-chunk decode callable."""

    def __init__(self, config: ExperimentConfig) -> None:
        self.config = config
        scheme = config.scheme
        extra = dict(config.scheme_config)
        self.params = awgn_params(config.eta_db, config.eta_prime_db,
                                  power_a=config.power)
        self.checkpoint = None
        self.schedule = None
        self.reps = 1
        if scheme == "modulo-sk":
            kwargs = {}
            if "safety_factor" in extra:
                kwargs["safety_factor"] = float(extra.pop("safety_factor"))
            if config.eta_prime_db is None:
                raise ConfigError("modulo-sk needs a feedback SNR")
            self.schedule = modsk_default_schedule(
                self.params, config.resolved_n, **kwargs
            )
        elif scheme == "attention":
            path = extra.pop("checkpoint", None)
            if path is None:
                raise ConfigError("attention scheme needs a checkpoint path")
            self.checkpoint = load_checkpoint(path)
            if self.checkpoint.config.n_bits != config.k_bits:
                raise ConfigError("checkpoint was trained for a different K")
        elif scheme == "repetition":
            self.reps = int(extra.pop("reps", 3))
        elif scheme == "uncoded":
            self.reps = 1
        if extra:
            raise ConfigError(f"unused scheme_config keys: {sorted(extra)}")

    def run_chunk(self, chunk_index: int, size: int) -> tuple[int, np.ndarray]:
        """Block and per-position bit error counts for one chunk."""
        config = self.config
        rng = np.random.default_rng(point_entropy(config) + [chunk_index])
        bits = (rng.random((size, config.k_bits)) < 0.5).astype(np.int8)
        scheme = config.scheme
        if scheme == "sk":
            decoded = sk_run_batch(
                bits, config.resolved_n, self.params, rng,
                feedback_noisy=config.eta_prime_db is not None,
            )
        elif scheme == "modulo-sk":
            decoded = modsk_run_batch(bits, self.params, self.schedule, rng)
        elif scheme == "attention":
            ck = self.checkpoint
            eval_config = ck.config
            if (eval_config.snr_db != config.eta_db
                    or eval_config.snr_fb_db != config.eta_prime_db):
                eval_config = replace(eval_config, snr_db=config.eta_db,
                                      snr_fb_db=config.eta_prime_db)
            probs = transmit_blocks(ck.model, eval_config, ck.calibration,
                                    bits.astype(np.float64), rng)
            decoded = (probs > 0.5).astype(np.int8)
        else:
            decoded = baseline_repetition(bits, self.reps, self.params, rng)
        wrong = decoded != bits
        return int(np.any(wrong, axis=1).sum()), wrong.sum(axis=0).astype(np.int64)


def _chunk_sizes(trials: int) -> list[int]:
    full, rest = divmod(trials, CHUNK_TRIALS)
    return [CHUNK_TRIALS] * full + ([rest] if rest else [])


def estimate_bler(config: ExperimentConfig, threads: int = 1) -> McEstimate:
    """Monte Carlo BLER with Wilson 95% interval and per-position bit
    errors (pad positions never appear in the counts).

    All configuration problems surface here before the first trial
    runs, because _PointRunner resolves schedules and checkpoints up
    front.
    """
    return _estimate_with_runner(_PointRunner(config), threads)


def _estimate_with_runner(runner: _PointRunner, threads: int) -> McEstimate:
    config = runner.config
    sizes = _chunk_sizes(config.trials)
    start = time.perf_counter()
    block_errors = 0
    bit_errors = np.zeros(config.k_bits, dtype=np.int64)
    done = 0

    if threads > 1 and len(sizes) > 1 and config.stop_at_errors is None:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(runner.run_chunk, range(len(sizes)), sizes))
        for blocks, bitvec in results:
            block_errors += blocks
            bit_errors += bitvec
        done = config.trials
    else:
        for index, size in enumerate(sizes):
            blocks, bitvec = runner.run_chunk(index, size)
            block_errors += blocks
            bit_errors += bitvec
            done += size
            if (config.stop_at_errors is not None
                    and block_errors >= config.stop_at_errors):
                break

    wall = time.perf_counter() - start
    bler = block_errors / done
    lo, hi = wilson_interval(block_errors, done)
    return McEstimate(trials=done, block_errors=block_errors, bler=bler,
                      ci_low=lo, ci_high=hi, bit_errors=bit_errors,
                      wall_seconds=wall)


# ---------------------------------------------------------------------------
# Config-file-driven sweeps

SWEEP_AXES = ("scheme", "K", "eta_db", "eta_prime_db")


@dataclass
class ExperimentResult:
    csv_path: str | None
    manifest_path: str | None
    rows: int
    failures: list[str]
    csv_text: str = ""


def _point_dicts(resolved: dict) -> list[dict]:
    """Expand the sweep block into per-point config dictionaries."""
    sweep = resolved.get("sweep", {})
    unknown = set(sweep) - set(SWEEP_AXES)
    if unknown:
        raise ConfigError(f"unknown sweep axes: {sorted(unknown)}")
    axes = [(axis, list(sweep[axis])) for axis in SWEEP_AXES if axis in sweep]
    base = {k: v for k, v in resolved.items() if k != "sweep"}
    if not axes:
        return [base]
    points = []
    for combo in itertools.product(*(values for _, values in axes)):
        point = dict(base)
        for (axis, _), value in zip(axes, combo):
            point[axis] = value
        points.append(point)
    return points


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_config_file(config_path: str) -> dict:
    """Read and minimally validate a JSON experiment config."""
    with open(config_path, encoding="utf-8") as fh:
        try:
            resolved = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(resolved, dict):
        raise ConfigError("config root must be an object")
    return resolved


def run_resolved(resolved: dict, out_dir: str | None, threads: int = 1,
                 overrides: dict | None = None) -> ExperimentResult:
    """Execute one point or a sweep described by a resolved config dict.

    Writes results.csv (one row per point) and manifest.json (the fully
    resolved configuration plus per-point outcomes) when out_dir is
    given.  Failing points are recorded and skipped; the caller decides
    the exit code.
    """
    resolved = dict(resolved)
    for key, value in (overrides or {}).items():
        if value is not None:
            resolved[key] = value

    points = _point_dicts(resolved)
    # Structural problems in any point abort the whole run before a
    # single trial executes; only runtime failures are recorded per
    # point further down.
    prepared = [(config, _PointRunner(config))
                for config in map(config_from_dict, points)]

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    manifest_points = []
    failures = []
    rows = 0
    for config, runner in prepared:
        try:
            estimate = _estimate_with_runner(runner, threads=threads)
            se = spectral_efficiency(estimate.bler, config.k_bits,
                                     config.n_tilde)
            writer.writerow([
                config.scheme,
                config.k_bits,
                config.resolved_n,
                _format_cell(float(config.eta_db)),
                _format_cell(None if config.eta_prime_db is None
                             else float(config.eta_prime_db)),
                estimate.trials,
                estimate.block_errors,
                _format_cell(estimate.bler),
                _format_cell(estimate.ci_low),
                _format_cell(estimate.ci_high),
                _format_cell(se),
                config.seed,
                _format_cell(estimate.wall_seconds),
            ])
            rows += 1
            manifest_points.append({
                "point": config.point_key(),
                "ok": True,
                "bit_errors": estimate.bit_errors.tolist(),
            })
        except (ConfigError, NumericalFailure) as exc:
            failures.append(f"{config.point_key()}: {exc}")
            manifest_points.append({
                "point": config.point_key(), "ok": False, "error": str(exc),
            })

    manifest = {
        "format_version": 1,
        "package_version": __version__,
        "config": resolved,
        "csv_columns": list(CSV_COLUMNS),
        "points": manifest_points,
    }
    csv_path = manifest_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, "results.csv")
        manifest_path = os.path.join(out_dir, "manifest.json")
        with open(csv_path, "w", encoding="ascii", newline="") as fh:
            fh.write(buf.getvalue())
        with open(manifest_path, "w", encoding="ascii") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=1)
            fh.write("\n")
    return ExperimentResult(csv_path=csv_path, manifest_path=manifest_path,
                            rows=rows, failures=failures,
                            csv_text=buf.getvalue())


def run_experiment(config_path: str, out_dir: str | None, threads: int = 1,
                   overrides: dict | None = None) -> ExperimentResult:
    """Execute the experiment described by a JSON config file."""
    return run_resolved(load_config_file(config_path), out_dir,
                        threads=threads, overrides=overrides)

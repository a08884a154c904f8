"""Plot-free walkthrough of the linear feedback scheme's error curve.

Runs the closed-form error expression against Monte Carlo at a few
forward SNRs and prints both columns, then shows how fast the estimate
variance collapses round by round.
"""

import math

import numpy as np

from fbcomm.channel import awgn_params
from fbcomm.classic import sk_bler_analytic, sk_run_batch, sk_variance_schedule

K = 6
N = 12
TRIALS = 20000

print(f"block of {K} bits, {N} rounds, {TRIALS} trials per point")
print("eta_db  analytic      monte_carlo")
rng = np.random.default_rng(7)
for eta_db in (-2.0, 0.0, 2.0, 4.0):
    params = awgn_params(eta_db)
    analytic = sk_bler_analytic(K, N, params.power_a, params.sigma2_f)
    bits = rng.integers(0, 2, (TRIALS, K)).astype(np.int8)
    decoded = sk_run_batch(bits, N, params, rng)
    mc = float((decoded != bits).any(axis=1).mean())
    print(f"{eta_db:6.1f}  {analytic:.6e}  {mc:.6e}")

print()
print("variance of the running estimate at 0 dB, per round:")
schedule = sk_variance_schedule(1.0, 1.0, 8)
for n, var in enumerate(schedule, start=1):
    bar = "#" * max(1, int(40 * var / schedule[0]))
    print(f"round {n}: {var:.3e} {bar}")
print()
print("each round divides the variance by 1 + P/sigma2, so the decay is")
print(f"geometric: log-ratio {math.log(schedule[1] / schedule[0]):+.4f} per round")

"""Fixed-point registers and the cliff where the feedback scheme dies.

The estimate refinement multiplies tiny residuals by large gains, so it
needs fractional resolution that grows with the constellation size.
This sweep shows the scheme working at generous widths and collapsing
abruptly a few bits below the requirement.
"""

from fbcomm.channel import awgn_params
from fbcomm.precision import precision_sweep

K = 10
TRIALS = 2000

params = awgn_params(10.0)
widths = [K + 5, K + 3, K + 1, K - 1, K - 3]
print(f"{K}-bit blocks at 10 dB, {TRIALS} trials per width")
print("total_bits  frac_bits  bler")
for point in precision_sweep([K], widths, params, TRIALS, seed=3,
                             int_bits=4):
    print(f"{point.total_bits:10d}  {point.frac_bits:9d}  {point.bler:.4f}")

print()
print("a 32-bit register with 28 fractional bits cannot carry a 50-bit")
print("payload: the final estimate needs resolution around 2^-50, so")
print("every block decodes wrong no matter the channel quality.")
for point in precision_sweep([50], [32], params, 200, seed=4, int_bits=4):
    print(f"K=50, total_bits=32: bler {point.bler:.3f}")

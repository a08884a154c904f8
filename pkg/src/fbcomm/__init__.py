"""Feedback-coded communication workbench.

Classic linear feedback schemes over AWGN, a modulo-arithmetic variant
that survives noisy feedback, a small attention-based learned code with
its training machinery, fixed-point precision studies, and a Monte
Carlo harness with a command-line surface.
"""

__version__ = "0.1.0"

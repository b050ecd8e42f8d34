"""Time-Stampless Adaptive Nonuniform Sampling toolkit.

Signal generators, generalized linear prediction, greedy and dynamic-programming
sampling functions, reconstruction methods and a rate-distortion benchmark
harness for discrete-time stochastic signals.
"""

__version__ = "1.0.0"
__author__ = "TANS Project"


class TansError(Exception):
    """Base exception for all toolkit errors."""

    pass

"""Desk-scale painting time-lapse pipeline: synthetic oracle data,
instruction generators, a multi-conditioned diffusion renderer, an
autoregressive inference loop, and the evaluation metric suite."""

__version__ = "0.1.0"

"""Residual-shifting diffusion between HQ and LQ signals."""

__version__ = "0.1.0"

"""Regularized stochastic porous-medium / fast-diffusion laboratory."""
__version__ = "0.1.0"

"""Decentralized optimization with exact diffusion and amortized
variance-reduced gradients over simulated networks."""

__version__ = "0.1.0"

"""Combinatorial-generalisation laboratory: factorized datasets, composition models and latent diagnostics."""

__version__ = "0.1.0"

"""Latent masked-autoregressive flow-matching surrogates for parametric PDEs."""

__version__ = "0.1.0"

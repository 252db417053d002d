"""Facial landmark synthesis from text or speech over a shared latent space."""

__version__ = "0.1.0"

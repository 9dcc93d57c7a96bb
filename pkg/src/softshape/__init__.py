"""Latent shape spaces for deformable objects."""
__version__ = "0.1.0"

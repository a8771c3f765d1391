"""VampPrior latent diffusion for photoplethysmography."""

__version__ = "0.1.0"

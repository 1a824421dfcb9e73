"""Joint clustering and regression with a latent group effect."""

__version__ = "0.1.0"

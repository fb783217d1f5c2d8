"""Desk-scale denoising diffusion GAN acoustic model.

The package is importable when the repository root is on sys.path; the
command-line wrapper lives in ``scripts/diffgan.py``.
"""

__version__ = "0.1.0"

__all__ = ["__version__"]

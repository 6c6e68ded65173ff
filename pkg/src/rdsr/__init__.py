"""Deterministic residual-interpolation diffusion for image super-resolution.

The degradation path blends a clean image toward its blurry upsampled
counterpart by a monotone weight sequence; the reconstruction path inverts
it in a handful of deterministic steps driven by a small conditional
predictor network. No noise is injected anywhere in sampling.
"""

__version__ = "0.1.0"

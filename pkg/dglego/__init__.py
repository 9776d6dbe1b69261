"""Deep Gaussian Layer-wise losses and LEGO layer-wise training."""

__version__ = "0.1.0"

"""Training-free point-cloud classification with Gaussian positional encoding."""

__version__ = "0.1.0"

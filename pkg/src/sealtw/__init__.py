"""Tree-Wasserstein label hierarchies and SEAL regularization."""
__version__ = "0.1.0"

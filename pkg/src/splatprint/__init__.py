"""Sparse-view 3D fingerprint reconstruction with pointmap alignment and Gaussian splatting."""

__version__ = "0.1.0"

"""Spiked eigenvalues of noncentral Fisher matrices and sample CCA."""
__version__ = "0.1.0"

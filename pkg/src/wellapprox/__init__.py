"""Fourier dimension of sets of well-approximable matrices: exponents,
single-scale spectra, the iterative measure construction and the slab
estimates, each paired with a brute-force check."""

__version__ = "0.1.0"

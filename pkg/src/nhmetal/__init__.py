"""Non-Hermitian two-band metals: spectra, exceptional lines, knot topology and
a simulated single-photon interferometric energy measurement."""

__version__ = "0.1.0"

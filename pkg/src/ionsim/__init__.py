"""Rate-equation simulation of Zeeman-qubit shelving readout and sideband
cooling of a single trapped ion."""

__version__ = "0.1.0"

"""Bandgap heat engine: driven qubit between structured thermal reservoirs."""

__all__ = ["__version__"]
__version__ = "0.1.0"

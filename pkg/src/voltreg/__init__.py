"""Model-free volt-VAR control for three-phase unbalanced feeders."""

__version__ = "0.1.0"

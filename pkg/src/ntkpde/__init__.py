"""Wide-network kernel laboratory for DGM and PINN training dynamics."""

__version__ = "0.1.0"

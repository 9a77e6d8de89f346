"""Half-space Stokes / Navier-Stokes toolkit at desk scale."""

__version__ = "0.1.0"

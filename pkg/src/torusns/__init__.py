"""Pseudospectral compressible barotropic Navier-Stokes on the torus with a
Littlewood-Paley/Besov analysis toolkit and a regularity diagnostics engine."""

__version__ = "0.1.0"

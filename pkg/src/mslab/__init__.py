"""Multiscale PDE numerics lab: FEM, homogenization, Schrödingerization emulation and cost accounting."""

__version__ = "0.1.0"

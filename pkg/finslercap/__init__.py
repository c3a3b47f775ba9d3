"""Finsler capacities, Wulff-shape geometry and the overdetermined symmetry check."""

__version__ = "0.1.0"

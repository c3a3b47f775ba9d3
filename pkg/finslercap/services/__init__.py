"""Pipelines built on the geometry and PDE layers: capacity, torsion, batch runs and acceptance."""

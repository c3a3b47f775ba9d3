"""Voxel discretization of the capacity and torsion energies."""

"""Atomistic lattices with next-to-nearest neighbour bonds, energy
minimization under clamped boundaries, and interface transition costs for
heterogeneous nanowires."""

__version__ = "0.1.0"

"""Surrogate-accelerated genetic optimization of field trajectories.

A lattice ferroelectric simulator provides an expensive, trajectory-dependent
fitness (total absolute curl of the polarization field). A genetic algorithm
evolves candidate field trajectories, and a deep-kernel-learning surrogate
actively learns each generation so that only a small fraction of candidates
is ever evaluated on the true simulator.
"""

__version__ = "0.1.0"

"""Stochastic ring-exchange dynamics on the square lattice.

Simulation engines (hard-core plaquette automaton, correlated walkers,
real-valued field automaton), exact fragment enumeration with sparse quantum
evolution, state preparation (stripes, annealed density waves, square waves),
measurement tools (diagonal Fourier ratios, melt times, flippability
correlators, structure factors) and a mean-field continuum integrator.
"""

__version__ = "0.1.0"

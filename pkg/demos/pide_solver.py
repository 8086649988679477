"""Viscosity solution of the nonlinear PIDE for a tent payoff, compared with heat.

With no jumps and a single volatility the equation is the heat equation, so the
solution is a Gaussian smoothing of the payoff. Adding volatility uncertainty and
jumps changes the value at the origin.
"""

import numpy as np
from scipy import integrate, stats

from glevy import PideGrid, UncertaintySet, presets, solve_viscosity_pide

phi = lambda x: np.maximum(0.0, 1.0 - np.abs(x))
grid = PideGrid(-8.0, 8.0, 513, 1.0)

heat = solve_viscosity_pide(phi, UncertaintySet.build([], [np.eye(1)]), grid)
exact = integrate.quad(lambda z: phi(z) * stats.norm.pdf(z), -1.0, 1.0)[0]
print(f"heat at (1, 0): {heat.at(1.0, 0.0):.5f}  Gaussian smoothing {exact:.5f}")

robust = solve_viscosity_pide(phi, presets.sample_uncertainty(), grid)
print(f"uncertain volatility with jumps at (1, 0): {robust.at(1.0, 0.0):.5f} using {robust.steps} steps")

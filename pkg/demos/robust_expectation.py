"""Upper expectation of a payoff when volatility is only known to lie in {0.5, 1}.

A single scenario gives a plain Monte Carlo mean. Letting volatility switch on a
lattice of control intervals can only raise the estimate, since the maximum runs
over a larger family evaluated on the same random numbers. For a convex payoff
such as |x| the constant high-volatility scenario already attains the maximum.
"""

import numpy as np

from glevy import ScenarioFamily, presets, sublinear_expectation

U = presets.sample_uncertainty()
payoff = lambda b: np.abs(b.Y[:, -1, 0])

for fam in (ScenarioFamily("single", single_pair=(0, 0)),
            ScenarioFamily("product-lattice", control_intervals=1),
            ScenarioFamily("product-lattice", control_intervals=4)):
    est = sublinear_expectation(payoff, fam, U, 1.0, 2.0**-6, 4000, seed=0)
    print(f"{fam.mode:16s} intervals={fam.control_intervals}  E|X_T| = {est.value:.4f} +/- {est.std_error:.4f}")

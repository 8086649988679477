"""Decomposition diagnostics: which specifications give a vanishing process.

Zero coefficients give an identically zero process. A Brownian integrand gives a
quadratic form bounded below by the ellipticity floor. A jump integrand is nonzero
exactly when at least one jump has occurred.
"""

import numpy as np

from glevy import DecompositionSpec, JumpMeasure, Scenario, UncertaintySet, decomposition_check

scn = [Scenario.constant(1.0)]
U = UncertaintySet.build([JumpMeasure.atomic([[1.0]], [2.0])], [np.eye(1)], ellipticity_floor=1.0)
for name, spec in (("zero", DecompositionSpec()),
                   ("brownian", DecompositionSpec(psi=lambda t, x: np.ones_like(x))),
                   ("jump", DecompositionSpec(k=lambda t, u: 1.0))):
    rep = decomposition_check(spec, U, scn, 1.0, 2.0**-5, 2000, seed=0)
    print(f"{name:9s} verdict={rep.verdict:8s} nonzero fraction={rep.nonzero_fraction:.3f}")
print(f"expected jump fraction 1 - e^-2 = {1 - np.exp(-2):.3f}")

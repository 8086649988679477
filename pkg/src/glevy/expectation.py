"""Sublinear expectations and capacities as maxima over scenario families.

For every scenario in the family the payoff is averaged over the same path
ids and seed (common random numbers), and the estimate is the largest of
those means. Because every payoff is evaluated on identical paths, the
monotonicity, subadditivity, homogeneity and translation properties hold for
the estimator itself up to floating-point rounding.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .paths import CoefficientSet, pure_driver_batch, simulate_driver, simulate_sde
from .scenario import EnumeratedFamily, ScenarioFamily, enumerate_scenarios
from .uncertainty import UncertaintySet


@dataclass
class RobustEstimate:
    value: float
    argmax_scenario: int
    means: np.ndarray
    std_errors: np.ndarray
    n_paths: int
    truncated: bool = False
    scenarios: tuple = field(default=(), repr=False)

    @property
    def std_error(self) -> float:
        return float(self.std_errors[self.argmax_scenario])

    @property
    def per_scenario(self):
        return [(float(m), float(s), self.n_paths) for m, s in zip(self.means, self.std_errors)]

    def as_dict(self):
        return {
            "value": self.value,
            "argmax_scenario": self.argmax_scenario,
            "std_error": self.std_error,
            "n_paths": self.n_paths,
            "truncated": self.truncated,
            "per_scenario": [{"scenario": i, "mean": m, "std_error": s, "n_paths": n}
                             for i, (m, s, n) in enumerate(self.per_scenario)],
        }


def _family(family, U, T):
    if isinstance(family, EnumeratedFamily):
        return family
    if isinstance(family, ScenarioFamily):
        return enumerate_scenarios(family, U, T)
    # a plain sequence of scenarios
    return EnumeratedFamily(tuple(family), False, len(family))


def simulate_batch(scn, U, T, dt, n_paths, seed=0, scenario_index=0, coefficients=None, y0=0.0):
    """One scenario's path batch: pure driver when ``coefficients`` is None."""
    driver = simulate_driver(scn, U, T, dt, seed=seed, n_paths=n_paths, scenario_index=scenario_index)
    if coefficients is None:
        return pure_driver_batch(driver, y0)
    return simulate_sde(coefficients, driver, y0)


def sublinear_expectation(payoff, family, U: UncertaintySet, T: float, dt: float, n_paths: int,
                          seed: int = 0, coefficients: CoefficientSet | None = None, y0=0.0,
                          workers: int = 1):
    """Estimate ``sup_theta E^theta[payoff]`` over an enumerable scenario family.

    ``payoff`` maps a :class:`~glevy.paths.PathBatch` to one value per path. A
    list of payoffs is evaluated on the same simulated paths and yields a list
    of estimates. ``coefficients=None`` selects the pure driver, ``Y = y0 + X``.
    Ties in the maximum go to the lowest scenario index.
    """
    if n_paths < 2:
        raise ValueError("need at least two paths per scenario")
    fam = _family(family, U, T)
    payoffs = list(payoff) if isinstance(payoff, (list, tuple)) else [payoff]

    def run(idx):
        batch = simulate_batch(fam[idx], U, T, dt, n_paths, seed, idx, coefficients, y0)
        out = []
        for xi in payoffs:
            vals = np.broadcast_to(np.asarray(xi(batch), float), (n_paths,))
            if not np.all(np.isfinite(vals)):
                bad = int(np.flatnonzero(~np.isfinite(vals))[0])
                raise FloatingPointError(f"payoff is not finite on path with seed triple {batch.seed_triple(bad)}")
            out.append((vals.mean(), vals.std(ddof=1) / np.sqrt(n_paths)))
        return out

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, range(len(fam))))
    else:
        results = [run(i) for i in range(len(fam))]

    estimates = []
    for j in range(len(payoffs)):
        means = np.array([r[j][0] for r in results])
        ses = np.array([r[j][1] for r in results])
        best = int(np.argmax(means))
        estimates.append(RobustEstimate(float(means[best]), best, means, ses, n_paths, fam.truncated, fam.scenarios))
    return estimates if isinstance(payoff, (list, tuple)) else estimates[0]


def capacity(event, family, U: UncertaintySet, T: float, dt: float, n_paths: int, **kwargs):
    """``sup_theta P^theta(event)``; ``event`` maps a batch to booleans per path."""
    if isinstance(event, (list, tuple)):
        return sublinear_expectation([_indicator(e) for e in event], family, U, T, dt, n_paths, **kwargs)
    return sublinear_expectation(_indicator(event), family, U, T, dt, n_paths, **kwargs)


def _indicator(event):
    def xi(batch):
        return np.asarray(event(batch), bool).astype(float)
    return xi


@dataclass
class RefinementReport:
    coarse: RobustEstimate
    fine: RobustEstimate
    tolerance: float

    @property
    def monotone(self) -> bool:
        return self.fine.value >= self.coarse.value - self.tolerance

    @property
    def improvement(self) -> float:
        return self.fine.value - self.coarse.value


def _nested(coarse_fam, U_c, fine_fam, U_f):
    n_c = max(s.n_intervals for s in coarse_fam)
    n_f = max(s.n_intervals for s in fine_fam)
    n = int(np.lcm(n_c, n_f))
    fine_keys = {s.key(U_f, n) for s in fine_fam}
    return all(s.key(U_c, n) in fine_keys for s in coarse_fam)


def refine_and_compare(payoff, coarse, fine, T: float, dt: float, n_paths: int, **kwargs) -> RefinementReport:
    """Compare a payoff's estimate on a coarse family and a finer family that contains it.

    ``coarse`` and ``fine`` are ``(family, uncertainty set)`` pairs; the sets may
    differ (for example a refined volatility grid). Raises ``ValueError`` when
    the coarse scenarios are not all present in the fine family.
    """
    (fam_c, U_c), (fam_f, U_f) = coarse, fine
    fam_c, fam_f = _family(fam_c, U_c, T), _family(fam_f, U_f, T)
    if not _nested(fam_c, U_c, fam_f, U_f):
        raise ValueError("coarse family is not contained in the fine family")
    est_c = sublinear_expectation(payoff, fam_c, U_c, T, dt, n_paths, **kwargs)
    est_f = sublinear_expectation(payoff, fam_f, U_f, T, dt, n_paths, **kwargs)
    tol = 2.0 * float(np.hypot(est_c.std_error, est_f.std_error))
    return RefinementReport(est_c, est_f, tol)

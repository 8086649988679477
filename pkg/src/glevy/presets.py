"""Named problem setups shared by the CLI, the demos and the acceptance tests."""

from __future__ import annotations

import numpy as np

from .paths import CoefficientSet
from .pide import PideWitness, manufacture_from_V, special_case_g, special_case_V
from .uncertainty import JumpMeasure, UncertaintySet


def sample_uncertainty() -> UncertaintySet:
    """One unit jump at rate 1 and volatility uncertain in ``{0.5, 1}``."""
    return UncertaintySet.build([JumpMeasure.atomic([[1.0]], [1.0])],
                                [np.array([[0.5]]), np.array([[1.0]])], ellipticity_floor=0.25)


def pure_driver(dim: int = 1) -> CoefficientSet:
    return CoefficientSet.pure_driver(dim)


def ou(kappa: float = 1.0, mean: float = 0.0, vol: float = 1.0) -> CoefficientSet:
    """Ornstein-Uhlenbeck drift ``kappa (mean - x)`` with constant ``vol``; no jump response."""
    return CoefficientSet.from_1d(b=lambda t, x: kappa * (mean - x), sigma=lambda t, x: vol + 0.0 * x)


def ou_variance(kappa: float, vol: float, q: float, T: float) -> float:
    """Exact variance of the OU state at ``T`` started from a constant, driver volatility ``q``."""
    return (vol * q) ** 2 * (1.0 - np.exp(-2.0 * kappa * T)) / (2.0 * kappa)


def manufactured_witness() -> PideWitness:
    """``V(t, x) = x + 0.1 sin(x) e^{-t}`` with exact derivatives."""
    return PideWitness.from_1d(
        lambda t, x: x + 0.1 * np.sin(x) * np.exp(-t),
        Vt=lambda t, x: -0.1 * np.sin(x) * np.exp(-t),
        Vx=lambda t, x: 1.0 + 0.1 * np.cos(x) * np.exp(-t),
        Vxx=lambda t, x: -0.1 * np.sin(x) * np.exp(-t),
    )


def manufactured_base() -> CoefficientSet:
    """``sigma = 1, h = 0, f(t, x, u) = u``; the drift is filled in by manufacturing."""
    return CoefficientSet.from_1d(sigma=lambda t, x: 1.0 + 0.0 * x, f=lambda t, x, u: u)


def manufactured_1d(alpha: float = 1.0, beta: float = 1.0, gamma: float = 1.0, U: UncertaintySet | None = None):
    """``(V, spec, coefficients, U)`` for the manufactured one-dimensional problem."""
    U = sample_uncertainty() if U is None else U
    V = manufactured_witness()
    spec, coeffs = manufacture_from_V(V, manufactured_base(), U, alpha, beta, gamma)
    return V, spec, coeffs, U


def half_case(U: UncertaintySet | None = None):
    """The manufactured problem with ``(alpha, beta, gamma) = (1, 1/2, 1)``."""
    return manufactured_1d(1.0, 0.5, 1.0, U)


# functions of the explicit (alpha, beta, gamma) = (1, 0, 0) preset
def _sc_h(t, x):
    return 0.5


def _sc_sigma(t, x):
    return 1.0


def _sc_b(t, x):
    return 0.3 * np.cos(x)


def _sc_f(t, x, u):
    return u


def special_case_1d(U: UncertaintySet | None = None, box=(-2.0, 2.0)):
    """``(V, spec, coefficients, U)`` for the explicit case with ``h / sigma^2 = 1/2``.

    ``b = 0.3 cos x``, ``f = u``, ``V(t, 0) = sin t`` and ``V_x(t, 0) = 1 + t``, so
    ``V(t, x) = sin t + (1 + t)(1 - e^{-x})``.
    """
    U = sample_uncertainty() if U is None else U
    V = special_case_V(_sc_h, _sc_sigma, np.sin, lambda t: 1.0 + t, box=box)
    spec = special_case_g(V, _sc_b, _sc_sigma, _sc_h, _sc_f, U)
    coeffs = CoefficientSet.from_1d(b=_sc_b, h=lambda t, x: 0.5 + 0.0 * x,
                                    sigma=lambda t, x: 1.0 + 0.0 * x, f=_sc_f)
    return V, spec, coeffs, U


def special_case_closed_form(t, x):
    return np.sin(t) + (1.0 + t) * (1.0 - np.exp(-x))


COEFFICIENT_PRESETS = ("pure-driver", "ou", "manufactured-1d", "special-case-1d")

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from glevy import (CoefficientSet, DecompositionSpec, FunctionalSpec, JumpMeasure, PideGrid, PideWitness,
                   Scenario, UncertaintySet, decomposition_check, manufacture_from_V, pide_system_residual,
                   solve_viscosity_pide, special_case_g, special_case_V)
from glevy import presets
from glevy.pide import max_residuals

unit = lambda t, x: 1.0 + 0 * x


def probes(n=7, box=(-3, 3)):
    t, x = np.meshgrid(np.linspace(0, 1, n), np.linspace(*box, n), indexing="ij")
    return t.ravel(), x.ravel()


def heat(fn, x, q2=1.0):
    return integrate.quad(lambda z: fn(z) * stats.norm.pdf(z, x, np.sqrt(q2)), x - 12, x + 12,
                          points=[-1.0, 0.0, 1.0], limit=200)[0]


def test_constant_witness_zero_residual(sample_U):
    V = PideWitness.from_1d(lambda t, x: 2.0 + 0 * x)
    c = CoefficientSet.from_1d(b=lambda t, x: x, h=np.sin, sigma=np.cos, f=lambda t, x, u: u * x)
    res = max_residuals(pide_system_residual(V, FunctionalSpec(dim=1), c, sample_U, *probes()))
    assert max(res.values()) <= 1e-8


def test_manufacture_linear_witness():
    U = UncertaintySet.build([JumpMeasure.atomic([[1.0]], [1.0])], [np.eye(1)], ellipticity_floor=1.0)
    V = PideWitness.from_1d(lambda t, x: x, Vt=lambda t, x: 0 * x, Vx=lambda t, x: 1 + 0 * x, Vxx=lambda t, x: 0 * x)
    base = CoefficientSet.from_1d(sigma=unit, f=lambda t, x, u: u)
    t, x = probes()
    xs = x[:, None]
    for gamma, b_expected in ((1.0, 1.0), (0.0, 0.0)):
        spec, c = manufacture_from_V(V, base, U, 1.0, 1.0, gamma)
        assert np.allclose(spec.g2_vector(t, xs), 1.0)
        assert np.allclose(spec.g1_matrix(t, xs), 0.0)
        assert np.allclose(spec.g3_value(t, xs, 0.7 + 0 * xs), 0.7)
        assert np.allclose(c.drift(t, xs), b_expected)


def test_manufactured_sine_witness(sample_U):
    V = PideWitness.from_1d(lambda t, x: x + 0.1 * np.sin(x), Vt=lambda t, x: 0 * x,
                            Vx=lambda t, x: 1 + 0.1 * np.cos(x), Vxx=lambda t, x: -0.1 * np.sin(x))
    spec, c = manufacture_from_V(V, presets.manufactured_base(), sample_U, 1.0, 2.0, 1.0)
    t, x = probes()
    xs = x[:, None]
    assert np.allclose(spec.g2_vector(t, xs)[:, 0], 1 + 0.1 * np.cos(x))
    assert np.allclose(spec.g1_matrix(t, xs)[:, 0, 0], -0.05 * np.sin(x) / 2.0)
    assert max(max_residuals(pide_system_residual(V, spec, c, sample_U, t, x)).values()) <= 1e-6


def test_manufacture_with_stencils(sample_U):
    V = PideWitness.from_1d(lambda t, x: x + 0.1 * np.sin(x) * np.exp(-t))
    spec, c = manufacture_from_V(V, presets.manufactured_base(), sample_U, 1.0, 1.0, 1.0)
    assert max(max_residuals(pide_system_residual(V, spec, c, sample_U, *probes())).values()) <= 1e-4


def test_manufacture_errors(sample_U):
    flat = PideWitness.from_1d(lambda t, x: np.sin(x))
    with pytest.raises(ValueError, match="floor"):
        manufacture_from_V(flat, presets.manufactured_base(), sample_U, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError, match="beta"):
        manufacture_from_V(presets.manufactured_witness(), presets.manufactured_base(), sample_U, 1.0, 0.0, 1.0)


def test_manufactured_two_dimensional():
    U = UncertaintySet.build([JumpMeasure.atomic([[0.5, -0.2]], [1.0])], [np.eye(2), np.diag([0.5, 1.0])],
                             ellipticity_floor=0.25)

    def value(t, x):
        return x[:, 0] + 0.5 * x[:, 1] + 0.1 * np.sin(x[:, 0] * x[:, 1]) * np.exp(-t)

    V = PideWitness(value, dim=2)
    sig = np.array([[1.0, 0.2], [0.0, 0.8]])
    base = CoefficientSet(dim=2, sigma=lambda t, x: np.broadcast_to(sig, (len(x), 2, 2)),
                          h={(0, 1): lambda t, x: 0.1 * np.cos(x)}, f=lambda t, x, u: u)
    spec, c = manufacture_from_V(V, base, U, 1.0, 1.0, 1.0, box=((0, 1), (-1, 1)))
    r = np.random.default_rng(0)
    res = pide_system_residual(V, spec, c, U, r.uniform(0, 1, 30), r.uniform(-1, 1, (30, 2)))
    assert max(max_residuals(res).values()) <= 1e-4


def test_special_case_V_examples():
    t, x = probes(5, (-2, 2))
    xs = x[:, None]
    lin = special_case_V(lambda t, x: 0.0, lambda t, x: 1.0, lambda t: 0.0, lambda t: 1.0)
    assert np.allclose(lin.value(t, xs), x, atol=1e-10)
    half = special_case_V(lambda t, x: 0.5, lambda t, x: 1.0, lambda t: 0.0, lambda t: 2.0 + t)
    assert np.allclose(half.value(t, xs), (2 + t) * (1 - np.exp(-x)), rtol=0, atol=1e-8)
    flat = special_case_V(lambda t, x: 0.3 * x, lambda t, x: 1.0 + 0.5 * np.cos(x), np.cos, lambda t: 0.0)
    assert np.allclose(flat.value(t, xs), np.cos(t), rtol=0, atol=1e-12)
    with pytest.raises(ValueError):
        special_case_V(lambda t, x: 0.0, lambda t, x: x, lambda t: 0.0, lambda t: 1.0)


def test_special_case_g_examples(sample_U):
    t, x = probes(5, (-2, 2))
    xs, u = x[:, None], np.full((len(x), 1), 0.8)
    V = special_case_V(lambda t, x: 0.0, lambda t, x: 1.0, lambda t: 0.0, lambda t: 1.0)
    g = special_case_g(V, lambda t, x: 0.0, lambda t, x: 1.0, lambda t, x: 0.0, lambda t, x, u: u, sample_U)
    assert np.allclose(g.g2_vector(t, xs), 1.0)
    assert np.allclose(g.g3_value(t, xs, u), 0.8)
    V2 = special_case_V(lambda t, x: 0.5, lambda t, x: 1.0, lambda t: 0.0, lambda t: 1.0 + t)
    g2 = special_case_g(V2, lambda t, x: 0.0, lambda t, x: 1.0, lambda t, x: 0.5, lambda t, x, u: u, sample_U)
    assert np.allclose(g2.g3_value(t, xs, u), (1 + t) * (np.exp(-x) - np.exp(-x - 0.8)), rtol=0, atol=1e-9)
    with pytest.raises(ValueError):
        special_case_g(V, lambda t, x: 0.0, lambda t, x: 1.0, lambda t, x: 0.0, lambda t, x, u: u,
                       UncertaintySet.build([], [np.eye(1)]))


def test_special_case_residual_preset():
    V, spec, c, U = presets.special_case_1d()
    res = max_residuals(pide_system_residual(V, spec, c, U, *probes(6, (-2, 2))))
    assert max(res.values()) <= 1e-6


def test_constant_payoff_stays_constant(sample_U):
    s = solve_viscosity_pide(lambda x: np.full_like(x, 0.7), sample_U, PideGrid(-4, 4, 129, 0.5))
    assert np.max(np.abs(s.v - 0.7)) <= 1e-14


def test_heat_equation_oracle(vol_only_U):
    phi = lambda x: np.maximum(0, 1 - np.abs(x))
    U = UncertaintySet.build([], [np.eye(1)])
    s = solve_viscosity_pide(phi, U, PideGrid(-8, 8, 513, 1.0))
    inner = s.x[np.abs(s.x) <= 4]
    assert np.max(np.abs(s.at(1.0, inner) - [heat(phi, x) for x in inner])) <= 1e-2


def test_convex_payoff_picks_max_volatility(vol_only_U):
    phi = lambda x: np.sqrt(1 + x * x)
    s = solve_viscosity_pide(phi, vol_only_U, PideGrid(-8, 8, 513, 1.0))
    inner = s.x[np.abs(s.x) <= 4]
    assert np.max(np.abs(s.at(1.0, inner) - [heat(phi, x) for x in inner])) <= 1e-2


def test_concave_payoff_picks_min_volatility(vol_only_U):
    phi = lambda x: -np.sqrt(1 + x * x)
    s = solve_viscosity_pide(phi, vol_only_U, PideGrid(-8, 8, 513, 1.0))
    inner = s.x[np.abs(s.x) <= 4]
    assert np.max(np.abs(s.at(1.0, inner) - [heat(phi, x, 0.25) for x in inner])) <= 1e-2


def test_stability_bound_enforced(sample_U):
    with pytest.raises(ValueError, match="stability"):
        solve_viscosity_pide(np.cos, sample_U, PideGrid(-4, 4, 257, 1.0, steps=10))
    with pytest.raises(ValueError, match="finite"), np.errstate(divide="ignore"):
        solve_viscosity_pide(lambda x: 1 / x, sample_U, PideGrid(-1, 1, 3, 1.0))


def test_surface_csv(sample_U, tmp_path):
    s = solve_viscosity_pide(np.cos, sample_U, PideGrid(-2, 2, 9, 0.1))
    s.write_csv(tmp_path / "v.csv")
    rows = open(tmp_path / "v.csv").read().splitlines()
    assert rows[0] == "t,x,v" and len(rows) == 1 + len(s.t) * 9


@settings(max_examples=15, deadline=None)
@given(st.floats(-1, 1), st.floats(0, 1), st.floats(0.1, 3))
def test_comparison_principle(shift, bump, width):
    U = UncertaintySet.build([JumpMeasure.atomic([[0.5], [-1.0]], [1.0, 0.5]), JumpMeasure.atomic([[0.25]], [2.0])],
                             [np.array([[0.5]]), np.array([[1.0]])])
    grid = PideGrid(-4, 4, 65, 0.5)
    phi = lambda x: np.maximum(0, 1 - np.abs(x - shift) / width)
    psi = lambda x: phi(x) + bump * np.exp(-x * x)
    lo, hi = solve_viscosity_pide(phi, U, grid), solve_viscosity_pide(psi, U, grid)
    assert np.all(lo.v <= hi.v)


def test_decomposition_zero_spec():
    U = UncertaintySet.build([JumpMeasure.atomic([[1.0]], [1.0])], [np.eye(1)], ellipticity_floor=1.0)
    rep = decomposition_check(DecompositionSpec(), U, [Scenario.constant(1.0)], 1.0, 2**-5, 100)
    assert rep.verdict == "zero" and rep.max_abs == 0.0


def test_decomposition_quadratic_form():
    U = UncertaintySet.build([], [np.eye(2)], ellipticity_floor=1.0)
    spec = DecompositionSpec(psi=lambda t, x: np.broadcast_to([1.0, 0.0], x.shape))
    rep = decomposition_check(spec, U, [Scenario.constant(1.0)], 1.0, 2**-6, 50)
    assert np.all(rep.quad_form == 1.0) and rep.bound_holds and np.all(rep.floor_bound == 1.0)
    assert rep.verdict == "nonzero"


def test_decomposition_poisson_fraction():
    U = UncertaintySet.build([JumpMeasure.atomic([[1.0]], [2.0])], [np.eye(1)], ellipticity_floor=1.0)
    rep = decomposition_check(DecompositionSpec(k=lambda t, u: 1.0), U, [Scenario.constant(1.0)], 1.0, 2**-4, 10_000)
    assert abs(rep.nonzero_fraction - (1 - np.exp(-2))) <= 3 * rep.nonzero_std_error


def test_decomposition_needs_elliptic_set():
    with pytest.raises(ValueError):
        decomposition_check(DecompositionSpec(), UncertaintySet.build([], [np.eye(1)]), [Scenario.constant(1.0)],
                            1.0, 0.5, 2)

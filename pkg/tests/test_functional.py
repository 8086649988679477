import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glevy import (CoefficientSet, FunctionalSpec, JumpMeasure, Scenario, UncertaintySet, classical_functional,
                   evaluate_functional, functional_terms, path_independence_residual, pure_driver_batch,
                   simulate_driver, simulate_sde)
from glevy import presets


@pytest.fixture
def batch(sample_U):
    drv = simulate_driver(Scenario.fixed([0.0, 0.5, 1.0], [(0, 0), (0, 1)]), sample_U, 1.0, 2**-6, seed=2,
                          n_paths=300)
    return pure_driver_batch(drv)


def test_zero_spec_gives_zero(batch, sample_U):
    assert np.all(evaluate_functional(FunctionalSpec(), batch, sample_U) == 0.0)


def test_constant_g2_telescopes(batch, sample_U):
    F = evaluate_functional(FunctionalSpec.from_1d(g2=lambda t, x: 1.5 + 0 * x), batch, sample_U, (0.25, 0.75))
    dB = batch.B[:, 48, 0] - batch.B[:, 16, 0]
    assert np.allclose(F, 1.5 * dB, rtol=0, atol=1e-13)


def test_unit_g3_counts_events(batch, sample_U):
    spec = FunctionalSpec.from_1d(gamma=0.0, g3=lambda t, x, u: 1.0 + 0 * x)
    F = evaluate_functional(spec, batch, sample_U, (0.25, 1.0))
    inside = (batch.ev_time > 0.25) & (batch.ev_time <= 1.0)
    assert np.array_equal(F, np.bincount(batch.ev_path[inside], minlength=batch.n_paths))


def test_record_matches_batch(batch, sample_U):
    spec = FunctionalSpec.from_1d(1.0, 0.5, 1.0, g1=lambda t, x: np.cos(x), g2=lambda t, x: x,
                                  g3=lambda t, x, u: u * x)
    F = evaluate_functional(spec, batch, sample_U)
    p = int(np.argmax(batch.jump_counts))
    assert evaluate_functional(spec, batch.record(p), sample_U) == pytest.approx(F[p], abs=1e-13)


def test_terms_sum(batch, sample_U):
    spec = FunctionalSpec.from_1d(1.0, 0.5, -1.0, g1=lambda t, x: x, g2=lambda t, x: np.sin(x),
                                  g3=lambda t, x, u: u)
    terms = functional_terms(spec, batch, sample_U)
    assert set(terms) == {"G", "covariation", "stochastic", "jumps", "compensator"}
    assert np.allclose(sum(terms.values()), evaluate_functional(spec, batch, sample_U), rtol=0, atol=1e-13)


def test_gamma_stays_inside_the_sup():
    U = UncertaintySet.build([JumpMeasure.atomic([[1.0]], [1.0]), JumpMeasure.atomic([[1.0]], [3.0])],
                             [np.eye(1)])
    spec = FunctionalSpec.from_1d(gamma=-1.0, g3=lambda t, x, u: u + 0 * x)
    # sup over nu of -int u dnu is -1, whereas -sup int u dnu would be -3
    assert spec.sup_compensator(0.0, np.zeros((1, 1)), U)[0] == pytest.approx(-1.0)


def test_window_errors(batch, sample_U):
    with pytest.raises(ValueError):
        evaluate_functional(FunctionalSpec(), batch, sample_U, (0.1, 0.5))


def test_residual_trivial_case(batch, sample_U):
    rep = path_independence_residual(FunctionalSpec(), lambda t, x: np.full(len(x), 3.0), batch, sample_U)
    assert rep.max_residual == 0.0


def test_residual_csv(batch, sample_U, tmp_path):
    rep = path_independence_residual(FunctionalSpec(), lambda t, x: x[:, 0], batch, sample_U)
    rep.write_csv(tmp_path / "r.csv")
    rows = open(tmp_path / "r.csv").read().splitlines()
    assert rows[0] == "path,seed,scenario,path_id,F,dV,residual" and len(rows) == 301


def test_classical_form_identity():
    U = UncertaintySet.build([JumpMeasure.atomic([[0.5], [-0.3]], [1.0, 0.5])], [np.eye(1)])
    drv = simulate_driver(Scenario.constant(1.0), U, 1.0, 2**-6, seed=0, n_paths=200)
    c = CoefficientSet.from_1d(b=lambda t, x: -0.5 * x, sigma=lambda t, x: 1 + 0.1 * np.sin(x),
                               f=lambda t, x, u: 0.5 * u)
    batch = simulate_sde(c, drv, 0.2)
    spec = FunctionalSpec.from_1d(1.0, 0.5, 1.0, g1=lambda t, x: np.cos(x), g2=lambda t, x: np.exp(-x * x),
                                  g3=lambda t, x, u: u * x)
    gap = evaluate_functional(spec, batch, U) - classical_functional(spec, batch, U.jump_family[0])
    assert np.max(np.abs(gap)) <= 1e-12


def test_manufactured_residual_small():
    V, spec, c, U = presets.manufactured_1d()
    drv = simulate_driver(Scenario.constant(1.0, 0, 1), U, 1.0, 2**-8, seed=0, n_paths=256)
    rep = path_independence_residual(spec, V, simulate_sde(c, drv, 0.0), U)
    assert rep.max_residual <= 0.02


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 31), st.integers(33, 63))
def test_additivity_and_empty_window(seed, a, b):
    U = UncertaintySet.build([JumpMeasure.atomic([[0.4]], [2.0])], [np.array([[0.5]]), np.array([[1.0]])])
    drv = simulate_driver(Scenario.fixed([0.0, 0.5, 1.0], [(0, 1), (0, 0)]), U, 1.0, 2**-6, seed=seed, n_paths=8)
    batch = pure_driver_batch(drv)
    spec = FunctionalSpec.from_1d(1.0, 0.5, 1.0, g1=lambda t, x: np.sin(x), g2=lambda t, x: x,
                                  g3=lambda t, x, u: u * np.cos(x))
    s, t, u = 0.0, a / 64, b / 64
    whole = evaluate_functional(spec, batch, U, (s, u))
    parts = evaluate_functional(spec, batch, U, (s, t)) + evaluate_functional(spec, batch, U, (t, u))
    assert np.allclose(whole, parts, rtol=0, atol=1e-12)
    assert np.all(evaluate_functional(spec, batch, U, (t, t)) == 0.0)

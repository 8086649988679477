import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glevy import (JumpMeasure, Scenario, ScenarioFamily, UncertaintySet, capacity, refine_and_compare,
                   simulate_driver, sublinear_expectation)
from glevy.expectation import simulate_batch

T, DT = 1.0, 2**-4


def B1(batch):
    return batch.B[:, -1, 0]


def test_constant_payoff(vol_only_U):
    est = sublinear_expectation(lambda b: np.full(b.n_paths, 2.5), ScenarioFamily("product-lattice"),
                                vol_only_U, T, DT, 64)
    assert est.value == 2.5 and est.std_error == 0.0


def test_centered_martingale(vol_only_U):
    est = sublinear_expectation(B1, ScenarioFamily("product-lattice"), vol_only_U, T, DT, 4000)
    for m, s, _ in est.per_scenario:
        assert abs(m) <= 3 * s


def test_squared_driver_lattice(vol_only_U):
    fam = ScenarioFamily("product-lattice", control_intervals=4)
    est = sublinear_expectation(lambda b: B1(b) ** 2, fam, vol_only_U, T, 2**-2, 20000)
    assert est.value == pytest.approx(1.0, rel=0.02)
    # the maximizing scenario keeps q = 1 throughout
    assert np.all(est.scenarios[est.argmax_scenario].table[..., 1] == 1)


def test_capacity_examples(vol_only_U):
    fam = ScenarioFamily("product-lattice")
    yes = capacity(lambda b: np.ones(b.n_paths, bool), fam, vol_only_U, T, DT, 64)
    no = capacity(lambda b: np.zeros(b.n_paths, bool), fam, vol_only_U, T, DT, 64)
    assert yes.value == 1.0 and no.value == 0.0
    half = capacity(lambda b: B1(b) > 0, fam, vol_only_U, T, DT, 4000)
    for m, s, _ in half.per_scenario:
        assert abs(m - 0.5) <= 3 * s


def test_single_scenario_is_classical_mean(sample_U):
    est = sublinear_expectation(lambda b: np.cos(b.Y[:, -1, 0]), ScenarioFamily("single", single_pair=(0, 1)),
                                sample_U, T, DT, 500, seed=11)
    batch = simulate_batch(Scenario.constant(T, 0, 1), sample_U, T, DT, 500, seed=11)
    assert est.value == np.cos(batch.Y[:, -1, 0]).mean()


def test_refinement_monotone(vol_only_U):
    sq = lambda b: B1(b) ** 2
    rep = refine_and_compare(sq, (ScenarioFamily("single", single_pair=(0, 1)), vol_only_U),
                             (ScenarioFamily("product-lattice", control_intervals=2), vol_only_U), T, 2**-2, 2000)
    assert rep.monotone and rep.fine.value >= rep.coarse.value
    const = refine_and_compare(lambda b: np.ones(b.n_paths), (ScenarioFamily("single"), vol_only_U),
                               (ScenarioFamily("product-lattice"), vol_only_U), T, DT, 100)
    assert const.coarse.value == const.fine.value


def test_refining_the_volatility_grid():
    U1 = UncertaintySet.build([], [np.array([[1.0]])])
    U2 = UncertaintySet.build([], [np.array([[0.5]]), np.array([[1.0]])])
    rep = refine_and_compare(lambda b: -B1(b) ** 2, (ScenarioFamily("product-lattice"), U1),
                             (ScenarioFamily("product-lattice"), U2), T, 2**-2, 20000)
    assert rep.coarse.value == pytest.approx(-1.0, abs=0.03)
    assert rep.fine.value == pytest.approx(-0.25, abs=0.01)
    assert rep.improvement > 0.7


def test_non_nested_families_rejected():
    U1 = UncertaintySet.build([], [np.array([[2.0]])])
    U2 = UncertaintySet.build([], [np.array([[0.5]]), np.array([[1.0]])])
    with pytest.raises(ValueError):
        refine_and_compare(B1, (ScenarioFamily("single"), U1), (ScenarioFamily("product-lattice"), U2), T, DT, 10)


def test_non_finite_payoff_names_the_path(vol_only_U):
    with pytest.raises(FloatingPointError, match="seed triple"), np.errstate(invalid="ignore"):
        sublinear_expectation(lambda b: np.log(B1(b)), ScenarioFamily("single"), vol_only_U, T, DT, 50)


def test_threads_do_not_change_results(sample_U):
    fam = ScenarioFamily("feedback-lattice", control_intervals=2, bins=2)
    payoff = lambda b: np.maximum(0, 1 - np.abs(b.Y[:, -1, 0]))
    a = sublinear_expectation(payoff, fam, sample_U, T, 2**-3, 300, workers=1)
    b = sublinear_expectation(payoff, fam, sample_U, T, 2**-3, 300, workers=4)
    assert np.array_equal(a.means, b.means) and a.argmax_scenario == b.argmax_scenario


def test_ties_go_to_lowest_index(vol_only_U):
    est = sublinear_expectation(lambda b: np.zeros(b.n_paths), ScenarioFamily("product-lattice"),
                                vol_only_U, T, DT, 10)
    assert est.argmax_scenario == 0


def test_common_random_numbers_monotone_in_volatility():
    # every scenario sees the same Brownian increments, so B_1^2 is ordered pathwise by q^2
    U = UncertaintySet.build([], [np.array([[0.5]]), np.array([[1.0]])])
    lo = simulate_batch(Scenario.constant(T, 0, 0), U, T, DT, 50, seed=3)
    hi = simulate_batch(Scenario.constant(T, 0, 1), U, T, DT, 50, seed=3)
    assert np.allclose(2 * lo.B[:, -1], hi.B[:, -1], rtol=0, atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.floats(-2, 2), st.floats(0, 3), st.floats(-1, 1))
def test_axioms_property(a, lam, c):
    U = UncertaintySet.build([JumpMeasure.atomic([[0.5]], [1.0])], [np.array([[0.5]]), np.array([[1.0]])])
    fam = ScenarioFamily("product-lattice", control_intervals=2)
    xi = lambda b: np.sin(a * b.Y[:, -1, 0])
    eta = lambda b: b.Y[:, -1, 0] ** 2
    ests = sublinear_expectation([xi, eta, lambda b: xi(b) + eta(b), lambda b: lam * xi(b),
                                  lambda b: xi(b) + c, lambda b: np.minimum(xi(b), eta(b))],
                                 fam, U, T, 2**-2, 200, seed=1)
    e_xi, e_eta, e_sum, e_lam, e_c, e_min = (e.value for e in ests)
    tol = 1e-12 * (1 + abs(e_xi) + abs(e_eta))
    assert e_sum <= e_xi + e_eta + tol
    assert e_lam == pytest.approx(lam * e_xi, abs=tol * (1 + lam))
    assert e_c == pytest.approx(e_xi + c, abs=tol + 1e-12 * abs(c))
    assert e_min <= min(e_xi, e_eta) + tol

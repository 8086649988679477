import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glevy import (BlowUpError, CoefficientSet, JumpMeasure, Scenario, UncertaintySet, coarsen,
                   pure_driver_batch, random_measure_sum, simulate_driver, simulate_sde,
                   validate_coefficients, write_path_csv)


def one_d(jumps=(), q=1.0, floor=0.0):
    return UncertaintySet.build(list(jumps), [np.array([[q]])], ellipticity_floor=floor)


def test_identity_vol_no_jumps():
    U = UncertaintySet.build([], [np.eye(2)])
    drv = simulate_driver(Scenario.constant(1.0), U, 1.0, 2**-6, seed=1, n_paths=5)
    assert np.array_equal(drv.qv[:, -1], np.broadcast_to(np.eye(2), (5, 2, 2)))
    assert len(drv.ev_path) == 0


def test_qv_is_exact_for_constant_Q():
    drv = simulate_driver(Scenario.constant(1.0), one_d(q=2.0), 1.0, 2**-8, n_paths=3)
    assert np.all(drv.qv[:, -1, 0, 0] == 4.0)


def test_poisson_jump_count_mean():
    U = one_d([JumpMeasure.atomic([[1.0]], [3.0])])
    drv = simulate_driver(Scenario.constant(1.0), U, 1.0, 2**-4, seed=0, n_paths=10_000)
    counts = drv.jump_counts
    se = counts.std(ddof=1) / np.sqrt(len(counts))
    assert abs(counts.mean() - 3.0) <= 3 * se


def test_event_times_lie_in_their_steps():
    U = one_d([JumpMeasure.atomic([[1.0], [-0.5]], [2.0, 1.0])])
    drv = simulate_driver(Scenario.constant(1.0), U, 1.0, 2**-3, seed=4, n_paths=200)
    lo, hi = drv.times[drv.ev_step], drv.times[drv.ev_step + 1]
    assert np.all((drv.ev_time > lo) & (drv.ev_time < hi))
    assert set(np.unique(drv.ev_mark)) <= {1.0, -0.5}


def test_density_marks_follow_the_density():
    nu = JumpMeasure.density(lambda u: np.ones_like(u), (0.5, 1.5))
    drv = simulate_driver(Scenario.constant(1.0), one_d([nu]), 1.0, 2**-4, seed=2, n_paths=4000)
    marks = drv.ev_mark[:, 0]
    assert marks.min() >= 0.5 and marks.max() <= 1.5
    assert abs(marks.mean() - 1.0) < 4 * marks.std() / np.sqrt(len(marks))


def test_reproducible_and_batch_independent():
    U = one_d([JumpMeasure.atomic([[1.0]], [2.0])])
    scn = Scenario.constant(1.0)
    a = simulate_driver(scn, U, 1.0, 2**-5, seed=9, n_paths=8)
    b = simulate_driver(scn, U, 1.0, 2**-5, seed=9, path_ids=[5])
    rec_a, rec_b = a.record(5), b.record(0)
    assert rec_a.seed_triple == rec_b.seed_triple
    assert np.array_equal(rec_a.X, rec_b.X) and np.array_equal(rec_a.event_times, rec_b.event_times)


def test_feedback_scenario_switches_on_state():
    U = UncertaintySet.build([], [np.array([[0.5]]), np.array([[1.0]])])
    scn = Scenario([0.0, 0.5, 1.0], [[(0, 0), (0, 1)], [(0, 0), (0, 1)]], [0.0])
    drv = simulate_driver(scn, U, 1.0, 2**-4, seed=0, n_paths=50)
    second = drv.vol_index[:, 8]
    assert np.array_equal(second, (drv.X[:, 8, 0] >= 0).astype(int))


def test_qv_additive_and_increasing():
    U = UncertaintySet.build([], [np.array([[1.0, 0.3], [0.0, 0.5]]), np.eye(2)])
    scn = Scenario.fixed([0.0, 0.5, 1.0], [(0, 0), (0, 1)])
    drv = simulate_driver(scn, U, 1.0, 2**-4, n_paths=2)
    qv = drv.qv
    assert np.allclose(qv[:, 12] - qv[:, 4], drv.dqv[:, 4:12].sum(axis=1), rtol=0, atol=1e-15)
    for i in range(drv.n_steps):
        assert np.all(np.linalg.eigvalsh(qv[0, i + 1] - qv[0, i]) >= -1e-15)


def test_pure_driver_identity_is_exact():
    U = UncertaintySet.build([JumpMeasure.atomic([[1.0, 0.0], [0.2, -0.4]], [1.5, 1.0])],
                             [np.array([[1.0, 0.2], [0.0, 0.7]]), np.eye(2)])
    scn = Scenario.fixed([0.0, 0.5, 1.0], [(0, 0), (0, 1)])
    drv = simulate_driver(scn, U, 1.0, 2**-6, seed=3, n_paths=64)
    # bitwise identity from the origin; a shifted start only differs by rounding of y0
    assert np.array_equal(simulate_sde(CoefficientSet.pure_driver(2), drv, 0.0).Y, drv.X)
    assert np.array_equal(pure_driver_batch(drv).Y, drv.X)
    y0 = np.array([0.3, -1.0])
    Y = simulate_sde(CoefficientSet.pure_driver(2), drv, y0).Y
    assert np.max(np.abs(Y - y0 - drv.X)) <= 1e-13


def test_constant_drift_is_exact():
    drv = simulate_driver(Scenario.constant(1.0), one_d(), 1.0, 2**-4, n_paths=3)
    Y = simulate_sde(CoefficientSet.from_1d(b=lambda t, x: 1.0 + 0 * x), drv, 0.5).Y
    assert np.allclose(Y[:, :, 0], 0.5 + drv.times, rtol=0, atol=1e-14)


def test_ou_variance_matches_closed_form():
    drv = simulate_driver(Scenario.constant(1.0), one_d(), 1.0, 2**-10, seed=0, n_paths=10_000)
    Y = simulate_sde(CoefficientSet.from_1d(b=lambda t, x: -x, sigma=lambda t, x: 1.0 + 0 * x), drv, 0.0).Y
    assert abs(Y[:, -1, 0].var(ddof=1) - 0.5 * (1 - np.exp(-2))) <= 5e-3


def test_blow_up_reports_seed_triple():
    drv = simulate_driver(Scenario.constant(1.0), one_d(), 1.0, 2**-4, seed=5, n_paths=2, scenario_index=3)
    with pytest.raises(BlowUpError) as info, np.errstate(over="ignore"):
        simulate_sde(CoefficientSet.from_1d(b=lambda t, x: 1e200 * x ** 2 + 1e300), drv, 1.0)
    assert info.value.seed_triple[:2] == (5, 3)


def test_coarsen_preserves_realization():
    U = one_d([JumpMeasure.atomic([[0.5]], [4.0])])
    drv = simulate_driver(Scenario.constant(1.0), U, 1.0, 2**-6, seed=1, n_paths=20)
    c = coarsen(drv, 4)
    assert c.n_steps == 16 and np.array_equal(c.X, drv.X[:, ::4])
    assert np.allclose(c.B, drv.B[:, ::4], rtol=0, atol=1e-14)
    Yc = simulate_sde(CoefficientSet.pure_driver(), c, 0.0).Y
    assert np.allclose(Yc, c.X, rtol=0, atol=1e-13)


def test_random_measure_sum_examples():
    U = one_d([JumpMeasure.atomic([[0.5], [-1.2]], [1.0, 1.0])])
    drv = simulate_driver(Scenario.constant(1.0), U, 1.0, 2**-4, seed=2, n_paths=400)
    counts = random_measure_sum(drv, lambda s, u: 1.0)
    assert np.array_equal(counts, drv.jump_counts)
    p = int(np.flatnonzero(drv.jump_counts == 0)[0])
    assert random_measure_sum(drv.record(p), lambda s, u: u[:, 0]) == 0.0
    q = int(np.flatnonzero(drv.jump_counts >= 2)[0])
    rec = drv.record(q)
    assert random_measure_sum(rec, lambda s, u: u[:, 0]) == pytest.approx(rec.event_marks.sum())
    s, t = 0.25, 0.75
    inside = (rec.event_times > s) & (rec.event_times <= t)
    assert random_measure_sum(rec, lambda s_, u: 1.0, (s, t)) == inside.sum()


def test_validate_coefficients_examples():
    rep = validate_coefficients(CoefficientSet.from_1d(b=lambda t, x: x))
    assert rep.passed and rep["H1_lipschitz"].value == pytest.approx(1.0)
    bad = validate_coefficients(CoefficientSet.from_1d(b=lambda t, x: np.sqrt(np.abs(x))))
    assert not bad["H1_lipschitz"].passed
    U = one_d([JumpMeasure.atomic([[1.0]], [1.0])])
    rep = validate_coefficients(CoefficientSet.from_1d(f=lambda t, x, u: x * u), U)
    assert rep.passed and rep["H1_lipschitz"].value == pytest.approx(1.0)


def test_strong_order_slope():
    mu, s = 0.05, 1.0
    drv = simulate_driver(Scenario.constant(1.0), one_d(), 1.0, 2**-10, seed=0, n_paths=2000)
    exact = np.exp((mu - 0.5 * s * s) + s * drv.B[:, -1, 0])
    c = CoefficientSet.from_1d(b=lambda t, x: mu * x, sigma=lambda t, x: s * x)
    dts, errs = [], []
    for factor in (1, 2, 4, 8, 16):
        Y = simulate_sde(c, coarsen(drv, factor), 1.0).Y[:, -1, 0]
        dts.append(2.0**-10 * factor)
        errs.append(np.sqrt(np.mean((Y - exact) ** 2)))
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert 0.35 <= slope <= 0.65


def test_path_csv(tmp_path):
    U = one_d([JumpMeasure.atomic([[1.0]], [5.0])])
    drv = simulate_driver(Scenario.constant(1.0), U, 1.0, 2**-3, seed=0, n_paths=2)
    main, events = write_path_csv(pure_driver_batch(drv), 0, tmp_path)
    lines = open(main).read().splitlines()
    assert lines[0] == "t,X1,B1,QV11,Y1" and len(lines) == 10
    assert len(open(events).read().splitlines()) == 1 + drv.jump_counts[0]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.1, 3.0), st.integers(2, 6))
def test_pure_driver_identity_property(seed, lam, log_steps):
    U = one_d([JumpMeasure.atomic([[0.7], [-0.3]], [lam, 1.0])], q=0.8)
    drv = simulate_driver(Scenario.constant(1.0), U, 1.0, 2.0**-log_steps, seed=seed, n_paths=16)
    assert np.array_equal(simulate_sde(CoefficientSet.pure_driver(), drv, 0.0).Y, drv.X)

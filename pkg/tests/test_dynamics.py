import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nbody_ftm.core import MassSystem, UsageError, pair_indices
from nbody_ftm.dynamics import (
    NO,
    YES,
    ExponentTable,
    classify,
    detect_partition,
    fit_pair_exponents,
    fit_power_law,
    integrate,
    trajectory_from_positions,
)
from oracles import circular_orbit, hyperbolic_initial, parabolic_initial

PAIR = MassSystem((1.0, 1.0))


@pytest.fixture(scope="module")
def parabolic():
    x0, v0 = parabolic_initial()
    return integrate(PAIR, x0, v0, 1e4, 1e-9)


@pytest.fixture(scope="module")
def circular():
    omega, pos, vel = circular_orbit(0.5)
    period = 2 * math.pi / omega
    times = np.linspace(0, 100 * period, 20001)
    traj = integrate(PAIR, pos(0.0)[0], vel(0.0)[0], 100 * period, 1e-9, sample_times=times)
    return traj, omega, period


def test_circular_phase_error(circular):
    traj, omega, period = circular
    rel = traj.positions[:, 1] - traj.positions[:, 0]
    phase = np.unwrap(np.arctan2(rel[:, 1], rel[:, 0]))
    err = np.abs(phase - phase[0] - omega * traj.times)
    assert err.max() / 100 <= 1e-6
    assert traj.energy_drift <= 1e-9


def test_single_body_linear():
    sys = MassSystem((2.0,), 3)
    x0, v0 = np.array([[1.0, 2.0, 3.0]]), np.array([[0.5, -0.25, 2.0]])
    traj = integrate(sys, x0, v0, 50.0)
    expected = x0[None] + traj.times[:, None, None] * v0[None]
    np.testing.assert_allclose(traj.positions, expected, rtol=1e-12, atol=1e-12)


def test_hyperbolic_asymptotic_speed():
    x0, v0 = hyperbolic_initial(2.0)
    traj = integrate(PAIR, x0, v0, 1e3)
    r = np.linalg.norm(traj.positions[-1, 1] - traj.positions[-1, 0])
    assert r / traj.times[-1] == pytest.approx(2.0, rel=0.01)
    assert fit_pair_exponents(traj).exponents[0] == pytest.approx(1.0, abs=0.01)


def test_power_law_synthetic():
    t = np.geomspace(1, 1e4, 200)
    assert fit_power_law(t, t ** (2 / 3))[0] == pytest.approx(2 / 3, abs=1e-3)
    assert fit_power_law(t, 5 * t)[0] == pytest.approx(1.0, abs=1e-3)


def test_parabolic_exponent_and_amplitude(parabolic):
    assert not parabolic.diagnostic
    assert fit_pair_exponents(parabolic).exponents[0] == pytest.approx(2 / 3, abs=0.02)
    r = np.linalg.norm(parabolic.positions[-1, 1] - parabolic.positions[-1, 0])
    amp = (9 * 2.0 / 2) ** (1 / 3) * parabolic.times[-1] ** (2 / 3)
    assert r == pytest.approx(amp, rel=0.02)


def test_parabolic_classification(parabolic):
    rep = classify(parabolic)
    assert rep.expansive == YES and rep.superhyperbolic == NO
    assert rep.partition.partition.classes == ((0, 1),)
    np.testing.assert_allclose(rep.drift, 0.0, atol=0.01)
    assert rep.cluster_potential_exponents[0][0] == pytest.approx(-2 / 3, abs=0.02)


def test_circular_classification(circular):
    rep = classify(circular[0])
    assert rep.expansive == NO and rep.superhyperbolic == NO


def table(n, exps):
    i, j = pair_indices(n)
    pairs = tuple(zip(i.tolist(), j.tolist()))
    e = np.array([exps.get(p, 1.0) for p in pairs])
    return ExponentTable(pairs, e, np.zeros_like(e))


def test_partition_examples():
    res = detect_partition(table(4, {(0, 1): 0.66}), n_bodies=4)
    assert res.partition.classes == ((0, 1), (2,), (3,))
    assert not res.inconsistent
    all_bound = {(a, b): 0.66 for a in range(4) for b in range(a + 1, 4)}
    assert detect_partition(table(4, all_bound), n_bodies=4).partition.classes == ((0, 1, 2, 3),)


def test_partition_inconsistent_closure():
    res = detect_partition(table(3, {(0, 1): 0.66, (1, 2): 0.66, (0, 2): 1.0}), n_bodies=3)
    assert res.partition.classes == ((0, 1, 2),) and res.inconsistent


def test_partition_excludes_indeterminate():
    t = table(3, {(0, 1): float("nan")})
    res = detect_partition(t, n_bodies=3)
    assert res.excluded == ((0, 1),)
    assert res.partition.classes == ((0,), (1,), (2,))


def test_short_horizon_is_indeterminate():
    t = np.linspace(1, 5, 50)
    pos = np.stack([np.zeros((50, 2)), np.column_stack([t, 0 * t])], axis=1)
    assert fit_pair_exponents(trajectory_from_positions(t, pos)).indeterminate.all()


def test_superhyperbolic_synthetic():
    t = np.geomspace(1e-2, 1e4, 600)
    pos = np.stack([np.zeros((t.size, 2)), np.column_stack([1 + t ** 2, 0 * t])], axis=1)
    rep = classify(trajectory_from_positions(t, pos))
    assert rep.superhyperbolic == YES
    assert not rep.drift_conclusive


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 3.0), st.floats(0.3, 2.0), st.integers(0, 2 ** 31))
def test_superhyperbolic_never_with_small_residual_drift(power, scale, seed):
    rng = np.random.default_rng(seed)
    t = np.geomspace(1e-2, 1e4, 400)
    direction = rng.normal(size=2)
    direction /= np.linalg.norm(direction)
    r = 1 + scale * t ** power
    pos = np.stack([np.zeros((t.size, 2)), r[:, None] * direction], axis=1)
    rep = classify(trajectory_from_positions(t, pos))
    assert not (rep.superhyperbolic == YES and rep.drift_conclusive)


def test_integrate_rejects_collision():
    with pytest.raises(UsageError):
        integrate(PAIR, np.zeros((2, 2)), np.zeros((2, 2)), 1.0)

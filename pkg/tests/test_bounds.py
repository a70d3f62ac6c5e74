import math

import numpy as np
import pytest

from nbody_ftm.bounds import (
    GRID,
    BoundConstants,
    FitError,
    PreconditionError,
    SampleSpec,
    comparison_chain,
    draw_phi_samples,
    defect_lower_bound,
    draw_lemma_cases,
    fit_log_constants,
    fit_phi_constants,
    interaction_log_rhs,
    lemma1_check,
    lemma1_rhs,
    maderna_rhs,
    maderna_tau_star,
    measure_interaction_growth,
    r_z,
)
from nbody_ftm.action import straight_path
from nbody_ftm.core import ClusterPartition, MassSystem, UsageError, potential
from nbody_ftm.minimize import SolveOptions, minimize_free_time


def C(a, b, a1=1.0, b1=1.0):
    return BoundConstants(a, b, a1, b1)


def test_maderna_rhs_examples():
    assert maderna_rhs(C(1, 1), 2, 1) == pytest.approx(4.5)
    assert maderna_rhs(C(2, 3), 1, 3) == pytest.approx(2 / 3 + 9)
    assert maderna_tau_star(C(1, 1), 1) == pytest.approx(1.0)
    assert maderna_rhs(C(1, 1), 1, 1) == pytest.approx(2.0)
    c = C(0.7, 2.2)
    t = maderna_tau_star(c, 1.8)
    assert maderna_rhs(c, 1.8, t) == pytest.approx(2 * math.sqrt(0.7 * 2.2 * 1.8))


def test_lemma1_rhs_examples():
    assert lemma1_rhs(0.0, C(1, 1), 1.0, 1.0) == pytest.approx(math.sqrt(6))
    assert lemma1_rhs(1.0, C(1, 1e-300), 0.0, 1.0) == pytest.approx(2.0)
    with pytest.raises(PreconditionError):
        lemma1_rhs(1.0, C(1, 1), 0.0, 1.0, r_z=1.0)
    with pytest.raises(UsageError):
        lemma1_rhs(-1.0, C(1, 1), 0.0, 1.0)


def test_r_z_for_singletons_is_zero():
    sys = MassSystem((1.0, 2.0, 3.0))
    rng = np.random.default_rng(0)
    assert r_z(sys, rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), ClusterPartition.singletons(3)) == 0.0


def test_interaction_log_rhs_examples():
    assert interaction_log_rhs(C(1, 1), 2.0, 2.0) == pytest.approx(math.log(2))
    assert interaction_log_rhs(C(1, 1, 2, 3), 1.5, 1.5) == pytest.approx(2 * math.log(4))
    assert interaction_log_rhs(C(1, 1), 1.0, 1e-14) == pytest.approx(0.0, abs=1e-13)


def test_one_body_fit_closed_form():
    sys = MassSystem((1.0,))
    spec = SampleSpec(count=40, seed=3)
    c = fit_phi_constants(sys, spec)
    assert c.beta == GRID[0]
    # phi = |x-y|^2/(2 tau) with |x-y|/r in (1/2, 1]: alpha sits on the 1/2 (|x-y|/r)^2 scale
    step = GRID[1] / GRID[0]
    assert 0.5 * 0.25 <= c.alpha <= 0.5 * 1.1 * step
    for x, y, r, tau in draw_phi_samples(sys, spec):
        assert np.sum((x - y) ** 2) / (2 * tau) <= maderna_rhs(c, r, tau)
    assert c.provenance["held_out_dominated"] == 1.0


def test_empty_sample_rejected():
    with pytest.raises(FitError):
        fit_phi_constants(MassSystem((1.0, 1.0)), SampleSpec(count=0))


def test_defect_trivial_cases():
    sys = MassSystem((1.0, 1.0))
    x = np.array([[0.0, 0.0], [1.0, 0.0]])
    path = straight_path(x, x, 1.0, 16)
    single = ClusterPartition.single(2)
    for tau in (0.5, 1e-3):
        d = defect_lower_bound(sys, path, 0.0, tau, single, 1.0)
        assert d.defect >= d.bound - 1e-9
    assert d.bound == pytest.approx(1e-3 * potential(sys, x))
    d = defect_lower_bound(sys, path, 0.0, 0.5, ClusterPartition.singletons(2), 1.0)
    assert d.bound == 0.0
    with pytest.raises(UsageError):
        defect_lower_bound(sys, path, 0.0, 0.5, single, 0.0)


def test_defect_residual_bounded_on_minimizer():
    sys = MassSystem((1.0, 1.0, 1.0))
    x = np.array([[0.0, 0.0], [0.6, 0.0], [3.0, 0.5]])
    y = np.array([[0.5, 1.5], [1.0, 2.2], [5.0, 3.0]])
    P = ClusterPartition(((0, 1), (2,)), 3)
    res = minimize_free_time(sys, x, y, 1.0, SolveOptions(segments=256))
    assert res.converged
    ratios = []
    tau = res.tau / 2
    while tau > res.tau / 64:
        d = defect_lower_bound(sys, res.path, 0.0, tau, P, 1.0)
        ratios.append(d.residual / tau ** (1 / 3))
        tau /= 2
    assert np.all(np.isfinite(ratios))
    assert max(abs(r) for r in ratios) < 10.0


def test_lemma_check_small():
    sys = MassSystem((1.0, 1.0, 1.0))
    P = ClusterPartition(((0, 1), (2,)), 3)
    cases = draw_lemma_cases(sys, 6, seed=2)
    c = C(1.0, 3.0)
    for x, y, h in cases:
        chk = lemma1_check(sys, x, y, P, h, c)
        assert chk.converged
        assert np.all(chk.R > chk.r_z)


def test_comparison_chain_holds():
    sys = MassSystem((1.0, 2.0, 1.0))
    x = np.array([[0.0, 0.0], [0.8, 0.0], [3.0, 1.0]])
    y = np.array([[0.3, 0.9], [1.0, 1.3], [4.5, 2.0]])
    chain = comparison_chain(sys, x, y, ClusterPartition(((0, 1), (2,)), 3), 0.8)
    assert chain.holds


def test_interaction_growth_and_log_fit():
    sys = MassSystem((1.0, 1.0))
    P = ClusterPartition.singletons(2)
    x = np.array([[0.0, 0.0], [1.0, 0.0]])
    taus = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
    targets = [np.array([[0.0, 0.0], [1.0 + 2.0 * t, 0.0]]) for t in taus]
    inter = measure_interaction_growth(sys, x, targets, taus, P, 1.0, SolveOptions(segments=1024))
    exact = np.log1p(2.0 * taus) / 2.0
    np.testing.assert_allclose(inter, exact, rtol=1e-6)
    c = fit_log_constants(np.ones_like(taus), taus, inter)
    assert np.all([interaction_log_rhs(c, 1.0, t) >= v for t, v in zip(taus, inter)])

import math

import numpy as np
import pytest

from spdegirsanov.coefficients import (AssumptionProfile, CoefficientSet,
                                       check_exponential_moment_condition,
                                       derive_drift_from_potential, derive_intensity_from_potential,
                                       effective_drift)
from spdegirsanov.errors import (DimensionError, IntensityRangeError, ScenarioError,
                                 SingularDiffusionError)
from spdegirsanov.noise import IntensityFunction, MarkSpace
from spdegirsanov.potentials import AffinePotential, ConstantPotential, QuadraticPotential
from spdegirsanov.spectral import SpectralBasis

N = 3
B = SpectralBasis.dirichlet(N)
G = np.array([0.4, -1.0, 2.0])
X = np.array([[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]])
PROBES = [(t, x) for t in (0.0, 0.5, 1.0) for x in (np.zeros(N), np.ones(N), np.array([2.0, -1.0, 3.0]))]


def test_effective_drift_examples():
    b = np.array([1.0, 2.0, 3.0])
    no_jumps = CoefficientSet(N, drift=b)
    marks = MarkSpace([2.0], G[None])
    np.testing.assert_array_equal(effective_drift(no_jumps, marks, IntensityFunction.constant([0.5]), 0.0, X),
                                  np.broadcast_to(b, X.shape))
    one = CoefficientSet(N, jump=G[None])
    np.testing.assert_allclose(effective_drift(one, marks, IntensityFunction.constant([0.5]), 0.3, X[0]),
                               -1.0 * G)
    sym = MarkSpace([2.0, 2.0], np.stack([G, -G]))
    cs = CoefficientSet(N, drift=b, jump=np.stack([G, -G]))
    np.testing.assert_allclose(effective_drift(cs, sym, IntensityFunction.constant(0.5, 2), 0.3, X),
                               np.broadcast_to(b, X.shape), atol=1e-15)


def test_derive_drift_examples():
    ident = CoefficientSet(N, diffusion=np.ones(N))
    assert not np.any(derive_drift_from_potential(ConstantPotential(B, 1.0), ident)(0.2, X))
    v = AffinePotential(B, 0.5 * B.unit(2))
    np.testing.assert_allclose(derive_drift_from_potential(v, ident)(0.2, X),
                               np.broadcast_to(0.5 * B.unit(2), X.shape))
    s = np.array([1.0, 3.0, 0.5])
    diag = CoefficientSet(N, diffusion=s)
    np.testing.assert_allclose(derive_drift_from_potential(v, diag)(0.2, X),
                               np.broadcast_to(0.5 * 9.0 * B.unit(2), X.shape))


def test_drift_round_trip():
    rng = np.random.default_rng(0)
    s = rng.normal(size=(N, N)) + 3 * np.eye(N)
    shell = CoefficientSet(N, diffusion=s)
    v = QuadraticPotential(B, np.eye(N), linear=[1.0, 0.0, -1.0])
    cs = shell.with_drift(derive_drift_from_potential(v, shell))
    t, x = rng.uniform(size=20), rng.normal(size=(20, N))
    gamma = cs.sigma_solve(t, x, cs.b(t, x))
    np.testing.assert_allclose(gamma, cs.sigma_adjoint_apply(t, x, v.gradient(t, x)), rtol=0, atol=1e-12)


def test_sigma_solve_guards():
    with pytest.raises(SingularDiffusionError):
        CoefficientSet(N).sigma_solve(0.0, X, X)
    with pytest.raises(SingularDiffusionError):
        CoefficientSet(N, diffusion=np.array([1.0, 0.0, 1.0])).sigma_solve(0.0, X, X)
    with pytest.raises(SingularDiffusionError):
        CoefficientSet(N, diffusion=np.array([1.0, 1e-9, 1.0])).sigma_solve(0.0, X, X)
    with pytest.raises(SingularDiffusionError):
        CoefficientSet(N, diffusion=np.ones((N, N))).sigma_solve(0.0, X, X)
    ok = CoefficientSet(N, diffusion=np.array([1.0, 1e-7, 1.0]))
    np.testing.assert_allclose(ok.sigma_solve(0.0, X, X)[:, 1], X[:, 1] * 1e7)


def test_sigma_layouts_agree():
    s = np.array([1.0, 2.0, 0.5])
    diag = CoefficientSet(N, diffusion=s)
    dense = CoefficientSet(N, diffusion=np.diag(s))
    call = CoefficientSet(N, diffusion=lambda t, x: np.broadcast_to(s, x.shape))
    w = np.array([0.3, -0.2, 1.0])
    for cs in (dense, call):
        np.testing.assert_allclose(cs.sigma_apply(0.1, X, w), diag.sigma_apply(0.1, X, w))
        np.testing.assert_allclose(cs.sigma_adjoint_apply(0.1, X, w), diag.sigma_adjoint_apply(0.1, X, w))
        np.testing.assert_allclose(cs.sigma_matrix(0.1, X), diag.sigma_matrix(0.1, X))
    with pytest.raises(DimensionError):
        CoefficientSet(N, drift=np.ones(2))
    with pytest.raises(DimensionError):
        CoefficientSet(N, diffusion=np.ones((2, 3)))


def test_perturb_drift():
    cs = CoefficientSet(N, drift=np.ones(N)).perturb_drift(0.1 * B.unit(1))
    np.testing.assert_allclose(cs.b(0.0, X), np.broadcast_to([1.1, 1.0, 1.0], X.shape))


def test_derived_intensity_value():
    v = AffinePotential(B, B.unit(1))
    g = np.array([[-0.7, 0.3, 0.0]])
    cs = CoefficientSet(N, jump=g)
    lam = derive_intensity_from_potential(v, cs, MarkSpace([2.0], g), PROBES)
    np.testing.assert_allclose(lam.rates(np.array([0.0, 0.7])), math.exp(-0.7))
    assert abs(math.exp(-0.7) - 0.4966) < 1e-4
    assert not lam.degenerate
    # every probe time is paired with every probe state
    assert lam.probe_table["values"].shape == (3, len(PROBES), 1)


def test_zero_jump_gives_degenerate_intensity():
    # with f = 0 there is nothing to thin: the intensity is identically one
    v = AffinePotential(B, B.unit(1))
    cs = CoefficientSet(N, jump=np.zeros((1, N)))
    lam = derive_intensity_from_potential(v, cs, MarkSpace([2.0], np.zeros((1, N))), PROBES)
    assert lam.degenerate
    assert np.all(lam.rates(np.linspace(0, 1, 5)) == 1.0)


def test_state_dependent_intensity_rejected():
    v = QuadraticPotential(B, np.eye(N))
    cs = CoefficientSet(N, jump=lambda t, x, i: -0.1 * x)
    with pytest.raises(ScenarioError):
        derive_intensity_from_potential(v, cs, MarkSpace([1.0], np.zeros((1, N))), PROBES)


def test_intensity_above_one_rejected():
    v = AffinePotential(B, B.unit(1))
    g = np.array([[0.1, 0.0, 0.0]])
    with pytest.raises(IntensityRangeError):
        derive_intensity_from_potential(v, CoefficientSet(N, jump=g), MarkSpace([1.0], g), PROBES)
    with pytest.raises(ValueError):
        derive_intensity_from_potential(v, CoefficientSet(N, jump=g), MarkSpace([1.0], g), [])


def test_moment_condition_examples():
    r = check_exponential_moment_condition(AssumptionProfile(0.0, 1.0, 2.0), 1.0)
    assert r.status == "pass" and r.bound == 1.0
    r = check_exponential_moment_condition(AssumptionProfile(1.0, 0.5, 2.0), 1.0)
    assert r.status == "pass"
    assert r.bound == pytest.approx(math.exp(1.5), rel=1e-15)
    assert round(r.bound, 4) == 4.4817
    assert check_exponential_moment_condition(AssumptionProfile(1.0, 1e-320, 2.0), 1.0).status == "fail"
    assert check_exponential_moment_condition(AssumptionProfile(None, 0.5, 2.0), 1.0).status == "indeterminate"
    with pytest.raises(IntensityRangeError):
        check_exponential_moment_condition(AssumptionProfile(1.0, 0.0, 2.0), 1.0)

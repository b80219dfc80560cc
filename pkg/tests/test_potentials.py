import numpy as np
import pytest
from scipy.special import expi

from spdegirsanov.coefficients import CoefficientSet
from spdegirsanov.potentials import (AffinePotential, ConstantPotential, ModeExponentialPotential,
                                     QuadraticPotential, ShiftedPotential,
                                     finite_difference_gradient, finite_difference_time)
from spdegirsanov.spectral import SpectralBasis, apply_A

B = SpectralBasis.dirichlet(4)


def beta_oracle(t, alpha0, beta0, lam, c, nu, s=0.0, d=0.0):
    """Closed form of beta via u = alpha(t): dt = du / (lam u)."""
    a = alpha0 * np.exp(lam * np.asarray(t))
    out = beta0 - 0.5 * alpha0 ** 2 * s * np.expm1(2 * lam * np.asarray(t)) / (2 * lam) \
        - d * alpha0 * np.expm1(lam * np.asarray(t)) / lam
    for ci, ni in zip(c, nu):
        def F(u):
            return expi(ci * u) - np.log(u) - np.exp(ci * u)
        out = out - ni / lam * (F(a) - F(alpha0))
    return out


@pytest.mark.parametrize("k, s, d, c, nu", [
    (1, 1.0, 0.0, [-0.7], [2.0]),
    (1, 0.0, 0.3, [-0.7], [2.0]),
    (2, 2.5, 0.0, [-0.2, -1.3], [0.5, 1.5]),
])
def test_beta_matches_exponential_integral(k, s, d, c, nu):
    T = 1.0 if k == 1 else 0.9
    v = ModeExponentialPotential(B, k, 0.5, 0.25, c, nu, T, diffusion_weight=s, drift_offset=d)
    t = np.linspace(0.0, T, 501)
    expect = beta_oracle(t, 0.5, 0.25, B.eigenvalues[k - 1], c, nu, s, d)
    np.testing.assert_allclose(v.beta(t), expect, rtol=1e-12, atol=1e-11)
    # knots hold the quadrature values themselves
    np.testing.assert_allclose(v.knot_values, beta_oracle(v.knots, 0.5, 0.25, B.eigenvalues[k - 1],
                                                          c, nu, s, d), rtol=1e-12, atol=1e-12)


def test_alpha_growth_cancels_A_term():
    v = ModeExponentialPotential(B, 2, 0.5, 0.0, [-0.7], [2.0], 0.5)
    x = np.random.default_rng(0).normal(size=(20, 4))
    t = np.linspace(0, 0.5, 20)
    lhs = v.alpha_rate(t) * x[:, 1]
    rhs = -np.sum(x * apply_A(B, v.gradient(t, x)), axis=-1)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-13)


POTENTIALS = [
    ConstantPotential(B, 3.0),
    AffinePotential(B, lambda t: np.stack([np.sin(t), t, 1 + 0 * t, -t], axis=-1),
                    offset=lambda t: t ** 2,
                    slope_rate=lambda t: np.stack([np.cos(t), 1 + 0 * t, 0 * t, -1 + 0 * t], axis=-1),
                    offset_rate=lambda t: 2 * t),
    QuadraticPotential(B, np.arange(16.0).reshape(4, 4) / 10, linear=[1, 0, -1, 2], constant=0.5),
    ShiftedPotential(QuadraticPotential(B, np.eye(4)), 0.01),
    ModeExponentialPotential(B, 1, 0.5, 0.0, [-0.7], [2.0], 1.0, diffusion_weight=1.0),
]


@pytest.mark.parametrize("v", POTENTIALS, ids=lambda v: type(v).__name__)
def test_derivatives_match_finite_differences(v):
    rng = np.random.default_rng(1)
    t = rng.uniform(0.1, 0.9, 30)
    x = rng.normal(size=(30, 4))
    g = v.gradient(t, x)
    fd = finite_difference_gradient(v, t, x)
    assert np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(g))) <= 1e-6
    dt = v.time_derivative(t, x)
    fdt = finite_difference_time(v, t, x)
    assert np.max(np.abs(dt - fdt) / np.maximum(1.0, np.abs(dt))) <= 1e-6
    np.testing.assert_allclose(v.a_gradient(t, x), apply_A(B, g))


def test_trace_terms():
    cs = CoefficientSet(4, diffusion=np.array([1.0, 2.0, 0.5, 1.0]))
    x = np.ones((3, 4))
    assert not np.any(POTENTIALS[1].trace_term(0.3, x, cs))
    assert not np.any(ConstantPotential(B).gradient(0.2, x))
    q = QuadraticPotential(B, np.diag([1.0, 1.0, 1.0, 0.0]))
    # Tr[sigma sigma^* 2Q] = 2 (1 + 4 + 0.25)
    np.testing.assert_allclose(q.trace_term(0.0, x, cs), 10.5)
    dense = CoefficientSet(4, diffusion=np.diag([1.0, 2.0, 0.5, 1.0]))
    np.testing.assert_allclose(q.trace_term(0.0, x, dense), 10.5)

"""Potentials ``v(t, x)`` with analytic derivatives.

All evaluators accept ``t`` of shape ``(...)`` (or a scalar) and ``x`` of
shape ``(..., n)`` and broadcast over the leading axes.
"""

from __future__ import annotations

import numpy as np
from scipy import integrate, interpolate

from .spectral import apply_A


def _tx(t, x):
    x = np.asarray(x, dtype=float)
    t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
    return t, x


class Potential:
    """Base class; subclasses supply ``value``, ``time_derivative`` and ``gradient``."""

    affine = False

    def __init__(self, basis):
        self.basis = basis

    def value(self, t, x):
        raise NotImplementedError

    def time_derivative(self, t, x):
        raise NotImplementedError

    def gradient(self, t, x):
        raise NotImplementedError

    def hessian(self, t, x):
        t, x = _tx(t, x)
        n = x.shape[-1]
        return np.zeros(x.shape[:-1] + (n, n))

    def a_gradient(self, t, x):
        """``A grad v``; the gradient is expressed in the eigen-basis."""
        return apply_A(self.basis, self.gradient(t, x))

    def trace_term(self, t, x, coefficients):
        """``Tr[(sigma sigma^*)(t, x) Hess v(t, x)]``."""
        t, x = _tx(t, x)
        if self.affine or not coefficients.has_diffusion:
            return np.zeros(x.shape[:-1])
        s = coefficients.sigma_matrix(t, x)
        h = self.hessian(t, x)
        return np.einsum("...ij,...kj,...ki->...", s, s, h)

    def __call__(self, t, x):
        return self.value(t, x)


class ConstantPotential(Potential):
    affine = True

    def __init__(self, basis, level=0.0):
        super().__init__(basis)
        self.level = float(level)

    def value(self, t, x):
        t, x = _tx(t, x)
        return np.full(x.shape[:-1], self.level)

    def time_derivative(self, t, x):
        t, x = _tx(t, x)
        return np.zeros(x.shape[:-1])

    def gradient(self, t, x):
        t, x = _tx(t, x)
        return np.zeros_like(x)


class AffinePotential(Potential):
    """``v(t, x) = <a(t), x> + c(t)`` with user-supplied derivatives.

    ``slope`` and ``slope_rate`` map times to vectors, ``offset`` and
    ``offset_rate`` map times to scalars. Constants are accepted for all four.
    """

    affine = True

    def __init__(self, basis, slope, offset=0.0, slope_rate=None, offset_rate=None):
        super().__init__(basis)
        n = basis.dimension
        self._slope = _as_vector_fn(slope, n)
        self._slope_rate = _as_vector_fn(np.zeros(n) if slope_rate is None else slope_rate, n)
        self._offset = _as_scalar_fn(offset)
        self._offset_rate = _as_scalar_fn(0.0 if offset_rate is None else offset_rate)

    def value(self, t, x):
        t, x = _tx(t, x)
        return np.sum(self._slope(t) * x, axis=-1) + self._offset(t)

    def time_derivative(self, t, x):
        t, x = _tx(t, x)
        return np.sum(self._slope_rate(t) * x, axis=-1) + self._offset_rate(t)

    def gradient(self, t, x):
        t, x = _tx(t, x)
        return np.broadcast_to(self._slope(t), x.shape).copy()


class QuadraticPotential(Potential):
    """Time-independent ``v(x) = <x, Q x> + <a, x> + c`` with symmetric ``Q``."""

    def __init__(self, basis, Q, linear=None, constant=0.0):
        super().__init__(basis)
        n = basis.dimension
        Q = np.asarray(Q, dtype=float)
        if Q.shape != (n, n):
            raise ValueError("Q must be an (n, n) matrix")
        self.Q = 0.5 * (Q + Q.T)
        self.linear = np.zeros(n) if linear is None else np.asarray(linear, dtype=float)
        self.constant = float(constant)

    def value(self, t, x):
        t, x = _tx(t, x)
        return np.einsum("...i,ij,...j->...", x, self.Q, x) + x @ self.linear + self.constant

    def time_derivative(self, t, x):
        t, x = _tx(t, x)
        return np.zeros(x.shape[:-1])

    def gradient(self, t, x):
        t, x = _tx(t, x)
        return 2.0 * x @ self.Q + self.linear

    def hessian(self, t, x):
        t, x = _tx(t, x)
        return np.broadcast_to(2.0 * self.Q, x.shape[:-1] + self.Q.shape).copy()


class ShiftedPotential(Potential):
    """``v(t, x) + rate * t``: the wrapped potential with ``d/dt v`` raised by ``rate``."""

    def __init__(self, inner, rate):
        super().__init__(inner.basis)
        self.inner = inner
        self.rate = float(rate)
        self.affine = inner.affine

    def value(self, t, x):
        t, x = _tx(t, x)
        return self.inner.value(t, x) + self.rate * t

    def time_derivative(self, t, x):
        return self.inner.time_derivative(t, x) + self.rate

    def gradient(self, t, x):
        return self.inner.gradient(t, x)

    def hessian(self, t, x):
        return self.inner.hessian(t, x)


class ModeExponentialPotential(Potential):
    """``v(t, x) = alpha(t) <x, e_k> + beta(t)`` with ``alpha(t) = alpha0 exp(lambda_k t)``.

    ``beta`` solves

        beta'(t) = -1/2 alpha^2 s - alpha d
                   - sum_i (exp(alpha c_i) - 1 - c_i alpha exp(alpha c_i)) nu_i,

    where ``s = ||sigma^* e_k||^2``, ``d = <b, e_k>`` for a fixed extra drift
    and ``c_i = <payload_i, e_k>``. The slope growth cancels the
    ``<x, A grad v>`` term; ``beta'`` then balances everything left in the
    integro-differential equation. ``beta`` itself is integrated by adaptive
    quadrature on ``[0, horizon]`` and stored as a cubic Hermite spline built
    from the exact derivative.
    """

    affine = True

    def __init__(self, basis, k, alpha0, beta0, projections, masses, horizon,
                 diffusion_weight=0.0, drift_offset=0.0, nodes=2048, quad_tol=1e-13):
        super().__init__(basis)
        self.k = int(k)
        self.alpha0 = float(alpha0)
        self.beta0 = float(beta0)
        self.rate = float(basis.eigenvalues[self.k - 1])
        self.projections = np.atleast_1d(np.asarray(projections, dtype=float))
        self.masses = np.atleast_1d(np.asarray(masses, dtype=float))
        self.horizon = float(horizon)
        self.diffusion_weight = float(diffusion_weight)
        self.drift_offset = float(drift_offset)
        self._e_k = basis.unit(self.k)
        self.knots = np.linspace(0.0, self.horizon, int(nodes) + 1)
        pieces = [integrate.quad(self.beta_rate, a, b, epsabs=quad_tol, epsrel=quad_tol, limit=200)[0]
                  for a, b in zip(self.knots[:-1], self.knots[1:])]
        self.knot_values = self.beta0 + np.concatenate([[0.0], np.cumsum(pieces)])
        self._beta = interpolate.CubicHermiteSpline(
            self.knots, self.knot_values, self.beta_rate(self.knots), extrapolate=True)

    def alpha(self, t):
        return self.alpha0 * np.exp(self.rate * np.asarray(t, dtype=float))

    def alpha_rate(self, t):
        return self.rate * self.alpha(t)

    def jump_integrand(self, t):
        a = self.alpha(t)[..., None]
        e = np.exp(a * self.projections)
        return np.sum((e - 1.0 - self.projections * a * e) * self.masses, axis=-1)

    def beta_rate(self, t):
        a = self.alpha(t)
        return -0.5 * a * a * self.diffusion_weight - a * self.drift_offset - self.jump_integrand(t)

    def beta(self, t):
        return self._beta(np.asarray(t, dtype=float))

    def value(self, t, x):
        t, x = _tx(t, x)
        return self.alpha(t) * x[..., self.k - 1] + self.beta(t)

    def time_derivative(self, t, x):
        t, x = _tx(t, x)
        return self.alpha_rate(t) * x[..., self.k - 1] + self.beta_rate(t)

    def gradient(self, t, x):
        t, x = _tx(t, x)
        return self.alpha(t)[..., None] * self._e_k * np.ones_like(x)


def _as_vector_fn(v, n):
    if callable(v):
        return lambda t: np.asarray(v(t), dtype=float)
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise ValueError(f"expected a length-{n} vector")
    return lambda t: np.broadcast_to(v, np.shape(t) + (n,))


def _as_scalar_fn(c):
    if callable(c):
        return lambda t: np.asarray(c(t), dtype=float)
    c = float(c)
    return lambda t: np.full(np.shape(t), c)


def finite_difference_gradient(potential, t, x, step=1e-5):
    """Central differences of ``v`` in each mode; a cross-check only."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for j in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[j] = step
        out[..., j] = (potential.value(t, x + e) - potential.value(t, x - e)) / (2 * step)
    return out


def finite_difference_time(potential, t, x, step=1e-5):
    t = np.asarray(t, dtype=float)
    return (potential.value(t + step, x) - potential.value(t - step, x)) / (2 * step)

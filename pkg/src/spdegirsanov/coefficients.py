"""Equation coefficients ``b``, ``sigma``, ``f`` and the characterization maps.

Coefficient callables are vectorized over a batch of paths: they receive
``t`` with shape ``(P,)`` and ``x`` with shape ``(P, n)``. Drift and jump
callables return ``(P, n)``; a diagonal diffusion returns ``(P, n)``
diagonal entries and a dense one ``(P, n, n)`` matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, IntensityRangeError, ScenarioError, SingularDiffusionError
from .noise import IntensityFunction, RATE_TOL

COND_LIMIT = 1e8
X_SPREAD_TOL = 1e-10


def _batch(t, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    t2 = np.broadcast_to(np.asarray(t, dtype=float), x2.shape[:-1])
    return t2, x2, single


def _out(a, single):
    return a[0] if single else a


class CoefficientSet:
    """Drift ``b``, diffusion ``sigma`` and jump map ``f`` on ``H_n``.

    Parameters
    ----------
    dimension : int
    drift : None, array of shape (n,), or callable
        ``None`` means ``b = 0``.
    diffusion : None, array, or callable
        ``None`` means ``sigma = 0``. A constant ``(n,)`` array is a
        diagonal operator, a constant ``(n, n)`` array a dense one.
    jump : None, array of shape (n_atoms, n), or callable ``f(t, x, i)``
        ``None`` means ``f = 0``; an array gives state-independent payloads.
    diffusion_kind : {"diagonal", "dense"}
        Output layout of a callable ``diffusion``.
    """

    def __init__(self, dimension, drift=None, diffusion=None, jump=None, diffusion_kind="diagonal"):
        self.dimension = int(dimension)
        n = self.dimension
        self._drift_const = None
        if drift is not None and not callable(drift):
            d = np.asarray(drift, dtype=float)
            if d.shape != (n,):
                raise DimensionError("constant drift must have shape (n,)")
            self._drift_const = d
        self._drift = drift

        self._sigma_const = None
        self.diffusion_kind = diffusion_kind
        if diffusion is not None and not callable(diffusion):
            s = np.asarray(diffusion, dtype=float)
            if s.shape == (n,):
                self.diffusion_kind = "diagonal"
            elif s.shape == (n, n):
                self.diffusion_kind = "dense"
            else:
                raise DimensionError("constant diffusion must have shape (n,) or (n, n)")
            self._sigma_const = s
        if self.diffusion_kind not in ("diagonal", "dense"):
            raise ValueError("diffusion_kind must be 'diagonal' or 'dense'")
        self._diffusion = diffusion

        self._jump_const = None
        if jump is not None and not callable(jump):
            f = np.asarray(jump, dtype=float)
            if f.ndim != 2 or f.shape[1] != n:
                raise DimensionError("constant jump payloads must have shape (n_atoms, n)")
            self._jump_const = f
        self._jump = jump

    # -- structure ---------------------------------------------------------
    @property
    def has_diffusion(self):
        return self._diffusion is not None

    @property
    def has_drift(self):
        return self._drift is not None

    @property
    def constant_drift(self):
        return self._drift_const

    @property
    def constant_diffusion(self):
        return self._sigma_const

    @property
    def has_jumps(self):
        return self._jump is not None

    @property
    def state_independent_jumps(self):
        return self._jump is None or self._jump_const is not None

    def with_drift(self, drift):
        return CoefficientSet(self.dimension, drift, self._diffusion, self._jump, self.diffusion_kind)

    def perturb_drift(self, delta):
        """Copy with ``b`` replaced by ``b + delta`` for a constant vector ``delta``."""
        delta = np.asarray(delta, dtype=float)
        base = self

        def drift(t, x):
            return base.b(t, x) + delta

        return self.with_drift(drift)

    # -- evaluators --------------------------------------------------------
    def b(self, t, x):
        t2, x2, single = _batch(t, x)
        if self._drift is None:
            out = np.zeros_like(x2)
        elif self._drift_const is not None:
            out = np.broadcast_to(self._drift_const, x2.shape).copy()
        else:
            out = np.asarray(self._drift(t2, x2), dtype=float)
        return _out(out, single)

    def _sigma_raw(self, t2, x2):
        if self._sigma_const is not None:
            return np.broadcast_to(self._sigma_const, x2.shape[:-1] + self._sigma_const.shape)
        return np.asarray(self._diffusion(t2, x2), dtype=float)

    def sigma_matrix(self, t, x):
        t2, x2, single = _batch(t, x)
        n = self.dimension
        if self._diffusion is None:
            out = np.zeros(x2.shape[:-1] + (n, n))
        else:
            s = self._sigma_raw(t2, x2)
            out = s[..., :, None] * np.eye(n) if self.diffusion_kind == "diagonal" else np.array(s)
        return _out(out, single)

    def sigma_apply(self, t, x, w):
        """``sigma(t, x) w``."""
        t2, x2, single = _batch(t, x)
        w = np.broadcast_to(np.asarray(w, dtype=float), x2.shape)
        if self._diffusion is None:
            out = np.zeros_like(x2)
        else:
            s = self._sigma_raw(t2, x2)
            out = s * w if self.diffusion_kind == "diagonal" else np.einsum("...ij,...j->...i", s, w)
        return _out(out, single)

    def sigma_adjoint_apply(self, t, x, y):
        """``sigma(t, x)^* y``."""
        t2, x2, single = _batch(t, x)
        y = np.broadcast_to(np.asarray(y, dtype=float), x2.shape)
        if self._diffusion is None:
            out = np.zeros_like(x2)
        else:
            s = self._sigma_raw(t2, x2)
            out = s * y if self.diffusion_kind == "diagonal" else np.einsum("...ji,...j->...i", s, y)
        return _out(out, single)

    def sigma_solve(self, t, x, y, cond_limit=COND_LIMIT):
        """``sigma(t, x)^{-1} y``, refusing singular or ill-conditioned operators."""
        t2, x2, single = _batch(t, x)
        y = np.broadcast_to(np.asarray(y, dtype=float), x2.shape)
        if self._diffusion is None:
            raise SingularDiffusionError("sigma = 0 has no inverse")
        s = self._sigma_raw(t2, x2)
        if self.diffusion_kind == "diagonal":
            mag = np.abs(s)
            lo, hi = mag.min(axis=-1), mag.max(axis=-1)
            if np.any(lo == 0) or np.any(hi > cond_limit * lo):
                raise SingularDiffusionError(
                    f"diagonal sigma condition number exceeds {cond_limit:g}")
            out = y / s
        else:
            cond = np.linalg.cond(s)
            if not np.all(np.isfinite(cond)) or np.any(cond > cond_limit):
                raise SingularDiffusionError(f"sigma condition number exceeds {cond_limit:g}")
            out = np.linalg.solve(s, y[..., None])[..., 0]
        return _out(out, single)

    def f(self, t, x, i):
        t2, x2, single = _batch(t, x)
        if self._jump is None:
            out = np.zeros_like(x2)
        elif self._jump_const is not None:
            out = np.broadcast_to(self._jump_const[i], x2.shape).copy()
        else:
            out = np.asarray(self._jump(t2, x2, i), dtype=float)
        return _out(out, single)


def effective_drift(cs, marks, lam, t, x):
    """``b(t, x) - sum_i f(t, x, u_i) lambda(t, u_i) nu_i``.

    Moves the compensator of the compensated jump integral into the drift.
    """
    t2, x2, single = _batch(t, x)
    out = cs.b(t2, x2)
    if cs.has_jumps and marks.n_atoms:
        rates = lam.rates(t2)
        for i in range(marks.n_atoms):
            out = out - cs.f(t2, x2, i) * (rates[..., i] * marks.masses[i])[..., None]
    return _out(out, single)


def derive_drift_from_potential(potential, cs):
    """Drift ``(t, x) -> sigma sigma^* grad v`` built from ``cs``'s diffusion."""

    def drift(t, x):
        g = potential.gradient(t, x)
        return cs.sigma_apply(t, x, cs.sigma_adjoint_apply(t, x, g))

    return drift


def derive_intensity_from_potential(potential, cs, marks, probe_points, spread_tol=X_SPREAD_TOL):
    """Intensity ``exp{v(t, x + f(t, x, u)) - v(t, x)}`` if it does not depend on ``x``.

    Every probe time is paired with every probe state. The returned
    intensity evaluates the formula at the first probe state.

    Raises
    ------
    ScenarioError
        If the exponent varies with ``x`` by more than ``spread_tol``.
    IntensityRangeError
        If a probed value is not in ``(0, 1]``.
    """
    probe_points = list(probe_points)
    if not probe_points:
        raise ValueError("at least one probe point is required")
    times = np.unique(np.array([float(t) for t, _ in probe_points]))
    states = np.array([np.asarray(x, dtype=float) for _, x in probe_points])
    if states.shape[-1] != cs.dimension:
        raise DimensionError("probe states do not match the coefficient dimension")
    tt = np.repeat(times, states.shape[0])
    xx = np.tile(states, (times.size, 1))
    exponents = np.empty((times.size, states.shape[0], marks.n_atoms))
    for i in range(marks.n_atoms):
        d = potential.value(tt, xx + cs.f(tt, xx, i)) - potential.value(tt, xx)
        exponents[:, :, i] = d.reshape(times.size, states.shape[0])
    spread = float(np.max(np.ptp(exponents, axis=1))) if exponents.size else 0.0
    if spread > spread_tol:
        raise ScenarioError(
            f"exp(v(t, x+f) - v(t, x)) depends on x (spread {spread:.3e}); "
            "no deterministic intensity satisfies the jump condition")
    probed = np.exp(exponents)
    if probed.size and (np.any(probed <= 0) or np.any(probed >= 1 + RATE_TOL)):
        raise IntensityRangeError(
            f"derived intensity outside (0, 1]: range [{probed.min():.6g}, {probed.max():.6g}]")
    x_ref = states[0]

    def rates(t):
        t = np.asarray(t, dtype=float)
        flat = t.reshape(-1)
        xr = np.broadcast_to(x_ref, flat.shape + x_ref.shape)
        base = potential.value(flat, xr)
        out = np.empty(flat.shape + (marks.n_atoms,))
        for i in range(marks.n_atoms):
            out[:, i] = np.exp(potential.value(flat, xr + cs.f(flat, xr, i)) - base)
        return np.minimum(out, 1.0).reshape(t.shape + (marks.n_atoms,))

    degenerate = bool(probed.size == 0 or np.all(np.abs(probed - 1.0) <= RATE_TOL))
    lam = IntensityFunction(rates, marks.n_atoms,
                            declared_min=float(probed.min()) if probed.size else 1.0,
                            degenerate=degenerate, name="potential")
    lam.probe_table = {"times": times, "states": states, "values": probed}
    return lam


@dataclass(frozen=True)
class AssumptionProfile:
    """User-declared bounds behind the exponential-martingale checks.

    ``lipschitz`` holds the integrable profiles ``L_b``, ``L_sigma``,
    ``L_f``, ``L'_f`` when known; they are recorded, not verified.
    """

    gamma_sup: float | None
    lambda_min: float
    total_mass: float
    lipschitz: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.gamma_sup is not None and self.gamma_sup < 0:
            raise ValueError("gamma_sup must be nonnegative")
        if self.total_mass < 0:
            raise ValueError("total_mass must be nonnegative")


@dataclass(frozen=True)
class MomentReport:
    status: str
    bound: float
    log_bound: float


def check_exponential_moment_condition(profile, horizon):
    """Deterministic Novikov-type bound for the density's exponential moment.

    bound = exp{ gamma_sup^2 T / 2 + T nu(U0) (1 - lambda_min)^2 / lambda_min }

    ``pass`` when finite, ``fail`` when it overflows, ``indeterminate`` when
    ``gamma_sup`` is unknown.
    """
    if profile.lambda_min <= 0:
        raise IntensityRangeError("lambda_min must be positive")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    lm = min(float(profile.lambda_min), 1.0)
    jump_part = horizon * profile.total_mass * (1.0 - lm) ** 2 / lm
    if profile.gamma_sup is None:
        return MomentReport("indeterminate", math.nan, math.nan)
    log_bound = 0.5 * profile.gamma_sup ** 2 * horizon + jump_part
    if not math.isfinite(log_bound) or log_bound > math.log(np.finfo(float).max):
        return MomentReport("fail", math.inf, log_bound)
    return MomentReport("pass", math.exp(log_bound), log_bound)

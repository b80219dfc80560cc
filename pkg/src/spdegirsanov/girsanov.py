"""Girsanov log-densities along simulated paths and the residuals built on them.

Everything is accumulated in log domain with left-endpoint quadrature on the
path's own time grid, so that

    log Lambda_t = wiener + quad + jump + comp

holds term by term at every node. Functions accept either a ``PathRecord``
or a ``PathBatch``; batch inputs give arrays with a leading path axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GridError
from .integrator import PathRecord, fsum_stats
from .spectral import Pairing, apply_A, inner, norm_sq


def _as_batch(path):
    if isinstance(path, PathRecord):
        return path.as_batch(), True
    return path, False


def _squeeze(a, single):
    return a[0] if single else a


@dataclass(frozen=True)
class GirsanovLog:
    """Cumulative terms of ``log Lambda`` at every node of the path grid.

    Arrays have shape ``(S+1,)`` for one path or ``(P, S+1)`` for a batch.
    """

    times: np.ndarray
    wiener_term: np.ndarray
    quad_term: np.ndarray
    jump_term: np.ndarray
    comp_term: np.ndarray
    grid_index: np.ndarray
    pairing: Pairing = Pairing.H
    total: np.ndarray = field(init=False)

    def __post_init__(self):
        total = self.wiener_term + self.quad_term + self.jump_term + self.comp_term
        object.__setattr__(self, "total", total)

    @property
    def log_density(self):
        """``log Lambda_T``."""
        return self.total[..., -1]

    @property
    def density(self):
        return np.exp(self.log_density)

    def on_grid(self, name="total"):
        return getattr(self, name)[..., self.grid_index]


def _cumulate(incr):
    out = np.zeros(incr.shape[:-1] + (incr.shape[-1] + 1,))
    np.cumsum(incr, axis=-1, out=out[..., 1:])
    return out


def _jump_and_comp(batch, lam, marks):
    times = batch.times
    P, S1 = times.shape
    h = np.diff(times, axis=1)
    if marks.n_atoms == 0:
        z = np.zeros((P, S1))
        return z, z.copy()
    rates = lam.rates(times[:, :-1])                      # (P, S, m), band-checked
    comp = -np.sum((1.0 - rates) * marks.masses, axis=-1) * h
    jump = np.zeros((P, S1))
    hit = batch.jump_atoms >= 0
    if np.any(hit):
        pi, si = np.nonzero(hit)
        at = lam.rates(times[pi, si])[np.arange(pi.size), batch.jump_atoms[pi, si]]
        jump[pi, si] = -np.log(at)
    return np.cumsum(jump, axis=1), _cumulate(comp)


def accumulate_girsanov_log(path, cs, lam, marks, pairing=Pairing.H):
    """Discrete ``log Lambda_t`` with ``gamma = sigma^{-1} b``.

    wiener = -sum <gamma(t_s, X_s), dW_s>, quad = -1/2 sum ||gamma||_H^2 h_s,
    jump = -sum log lambda at accepted events, comp = -sum_s sum_i
    (1 - lambda(t_s, u_i)) nu_i h_s.

    With ``Pairing.HTILDE`` only the ``dW`` pairing uses the weighted inner
    product. When the coefficient set has no diffusion there is no Brownian
    driver to reweight, and the log reduces to its pure-jump form.

    Raises
    ------
    SingularDiffusionError
        If ``b`` is nonzero and ``sigma`` is singular or has condition number
        above ``1e8`` somewhere on the path.
    IntensityRangeError
        If ``lambda`` leaves ``(0, 1]``.
    """
    pairing = Pairing.parse(pairing)
    batch, single = _as_batch(path)
    times = batch.times
    P, S1 = times.shape
    N = batch.states.shape[-1]
    h = np.diff(times, axis=1)
    wiener = np.zeros((P, S1))
    quad = np.zeros((P, S1))
    if cs.has_diffusion and cs.has_drift:
        t = times[:, :-1].reshape(-1)
        x = batch.states[:, :-1].reshape(-1, N)
        gamma = cs.sigma_solve(t, x, cs.b(t, x)).reshape(P, S1 - 1, N)
        wiener = _cumulate(-inner(gamma, batch.dW, pairing))
        quad = _cumulate(-0.5 * norm_sq(gamma) * h)
    jump, comp = _jump_and_comp(batch, lam, marks)
    return GirsanovLog(_squeeze(times, single), _squeeze(wiener, single), _squeeze(quad, single),
                       _squeeze(jump, single), _squeeze(comp, single), batch.grid_index, pairing)


def pure_jump_girsanov_log(path, lam, marks):
    """``log`` of the pure-jump density: only the jump and compensator terms."""
    batch, single = _as_batch(path)
    if not batch.diffusion_free:
        raise ValueError("path was simulated with a diffusion coefficient")
    jump, comp = _jump_and_comp(batch, lam, marks)
    z = np.zeros_like(jump)
    return GirsanovLog(_squeeze(batch.times, single), _squeeze(z, single), _squeeze(z.copy(), single),
                       _squeeze(jump, single), _squeeze(comp, single), batch.grid_index, Pairing.H)


@dataclass(frozen=True)
class ResidualSeries:
    """Residual values on a path grid; ``(S+1,)`` or ``(P, S+1)``."""

    times: np.ndarray
    values: np.ndarray
    grid_index: np.ndarray

    @property
    def max_abs(self):
        return np.max(np.abs(self.values), axis=-1)

    @property
    def rms(self):
        return np.sqrt(np.mean(self.values ** 2, axis=-1))

    def on_grid(self):
        return self.values[..., self.grid_index]


def path_independence_residual(path, glog, potential):
    """``r_t = log Lambda_t + v(t, X_t) - v(0, x_0)``; zero at ``t = 0``."""
    batch, single = _as_batch(path)
    times = batch.times
    if np.shape(glog.times) != np.shape(_squeeze(times, single)) \
            or not np.array_equal(glog.times, _squeeze(times, single)):
        raise GridError("Girsanov log and path are on different time grids")
    v = potential.value(times, batch.states)
    r = glog.total + _squeeze(v - v[:, :1], single)
    return ResidualSeries(_squeeze(times, single), r, batch.grid_index)


def ide_residual(potential, cs, marks, t, x, pairing=Pairing.H):
    """Left side minus right side of the time-reversed IDE at ``(t, x)``.

    dv/dt + 1/2 Tr[sigma sigma^* Hess v] + 1/2 ||sigma^* grad v||_H^2
      + <x, A grad v>_H + sum_i [e^{D_i} - 1 - <f_i, grad v> e^{D_i}] nu_i

    with ``D_i = v(t, x + f_i) - v(t, x)``. Vectorized over leading axes.
    """
    pairing = Pairing.parse(pairing)
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    t = np.broadcast_to(t, x.shape[:-1])
    g = potential.gradient(t, x)
    out = potential.time_derivative(t, x) + inner(x, apply_A(potential.basis, g))
    if cs.has_diffusion:
        out = out + 0.5 * potential.trace_term(t, x, cs) \
            + 0.5 * norm_sq(cs.sigma_adjoint_apply(t, x, g))
    return out + _jump_integral(potential, cs, marks, t, x, g, pairing)


def _jump_integral(potential, cs, marks, t, x, g, pairing):
    out = np.zeros(x.shape[:-1])
    if not cs.has_jumps:
        return out
    base = potential.value(t, x)
    for i in range(marks.n_atoms):
        f = cs.f(t, x, i)
        e = np.exp(potential.value(t, x + f) - base)
        out = out + (e - 1.0 - inner(f, g, pairing) * e) * marks.masses[i]
    return out


def pure_jump_ide_residual(potential, cs, marks, t, x):
    """Residual of the pure-jump time-reversed equation at ``(t, x)``.

    dv/dt + <Ax + b(t, x), grad v>_H + sum_i [e^{D_i} - 1 - <f_i, grad v> e^{D_i}] nu_i
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    t = np.broadcast_to(t, x.shape[:-1])
    g = potential.gradient(t, x)
    drift = apply_A(potential.basis, x) + cs.b(t, x)
    return potential.time_derivative(t, x) + inner(drift, g) \
        + _jump_integral(potential, cs, marks, t, x, g, Pairing.H)


def ito_residual(path, potential, cs, marks, lam, pairing=Pairing.H):
    """``v(t, X_t) - v(0, x_0)`` minus the discretized Ito expansion.

    Per sub-step the expansion adds, at the left end,

        [dv/dt + <grad v, b> + <A grad v, X>_H + 1/2 Tr(sigma sigma^* Hess v)
         + sum_i (D_i - <f_i, grad v>) lambda_i nu_i] h + <sigma^* grad v, dW>,

    then the compensated jump term: ``v(X- + f) - v(X-)`` at an accepted
    event minus ``sum_i D_i lambda_i nu_i h``.
    """
    pairing = Pairing.parse(pairing)
    batch, single = _as_batch(path)
    times = batch.times
    P, S1 = times.shape
    N = batch.states.shape[-1]
    h = np.diff(times, axis=1).reshape(-1)
    t = times[:, :-1].reshape(-1)
    x = batch.states[:, :-1].reshape(-1, N)
    g = potential.gradient(t, x)
    rate = potential.time_derivative(t, x) + inner(g, cs.b(t, x), pairing) \
        + inner(potential.a_gradient(t, x), x)
    rhs = np.zeros_like(t)
    if cs.has_diffusion:
        rate = rate + 0.5 * potential.trace_term(t, x, cs)
        dW = batch.dW.reshape(-1, N)
        rhs = rhs + inner(cs.sigma_adjoint_apply(t, x, g), dW, pairing)
    if cs.has_jumps and marks.n_atoms:
        rates = lam.rates(t)
        base = potential.value(t, x)
        for i in range(marks.n_atoms):
            f = cs.f(t, x, i)
            d = potential.value(t, x + f) - base
            w = rates[:, i] * marks.masses[i]
            rate = rate + (d - inner(f, g, pairing)) * w
            rhs = rhs - d * w * h
    rhs = (rhs + rate * h).reshape(P, S1 - 1)
    kicks = np.zeros((P, S1))
    hit = batch.jump_atoms >= 0
    if np.any(hit):
        pi, si = np.nonzero(hit)
        tj = times[pi, si]
        xl = batch.left_states[pi, si]
        for a in np.unique(batch.jump_atoms[pi, si]):
            sel = batch.jump_atoms[pi, si] == a
            f = cs.f(tj[sel], xl[sel], int(a))
            kicks[pi[sel], si[sel]] = potential.value(tj[sel], xl[sel] + f) - potential.value(tj[sel], xl[sel])
    expansion = _cumulate(rhs) + np.cumsum(kicks, axis=1)
    v = potential.value(times, batch.states)
    r = (v - v[:, :1]) - expansion
    return ResidualSeries(_squeeze(times, single), _squeeze(r, single), batch.grid_index)


# -- measure-change statistics -----------------------------------------------

@dataclass(frozen=True)
class AtomCheck:
    atom: int
    estimate: float
    target: float
    standard_error: float
    passed: bool


@dataclass(frozen=True)
class MeasureChangeReport:
    """Monte Carlo evidence for a change of measure; pass means within 3 SE."""

    n_paths: int
    mean_density: float
    density_se: float
    passed: bool
    atoms: tuple = ()

    def as_dict(self):
        return {
            "n_paths": self.n_paths,
            "mean_density": self.mean_density,
            "density_se": self.density_se,
            "passed": self.passed,
            "atoms": [vars(a).copy() for a in self.atoms],
        }


def _within(estimate, target, se, k=3.0):
    return bool(abs(estimate - target) <= k * se)


def martingale_check(log_density, min_paths=1000):
    """Is ``E[Lambda_T] = 1`` consistent with the sample at 3 SE?"""
    logs = np.asarray(log_density, dtype=float).reshape(-1)
    if logs.size < min_paths:
        raise ValueError(f"martingale_check needs at least {min_paths} paths, got {logs.size}")
    mean, _, se = fsum_stats(np.exp(logs))
    return MeasureChangeReport(logs.size, mean, se, _within(mean, 1.0, se))


def compensator_change_check(log_density, counts, marks, horizon, min_paths=10_000):
    """Density-weighted accepted counts per atom against ``T nu_i``.

    Under the reweighted measure the counting measure has compensator
    ``dt nu(du)``, so ``E[Lambda_T N([0, T] x {u_i})] = T nu_i``.
    """
    logs = np.asarray(log_density, dtype=float).reshape(-1)
    counts = np.asarray(counts, dtype=float).reshape(logs.size, -1)
    if logs.size < min_paths:
        raise ValueError(f"compensator_change_check needs at least {min_paths} paths, got {logs.size}")
    if counts.shape[1] != marks.n_atoms:
        raise ValueError("count columns do not match the mark space")
    dens = np.exp(logs)
    mean, _, se = fsum_stats(dens)
    atoms = []
    for i in range(marks.n_atoms):
        est, _, s = fsum_stats(dens * counts[:, i])
        target = float(horizon) * float(marks.masses[i])
        atoms.append(AtomCheck(i, est, target, s, _within(est, target, s)))
    passed = all(a.passed for a in atoms)
    return MeasureChangeReport(logs.size, mean, se, passed, tuple(atoms))


def rms(values):
    values = np.asarray(values, dtype=float).reshape(-1)
    return math.sqrt(math.fsum((values ** 2).tolist()) / values.size)

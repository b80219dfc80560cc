"""Scenario registry and configuration files.

A scenario bundles a spectral basis, a mark space, coefficients, an
intensity and (optionally) the potential ``v`` that should make the Girsanov
density path-independent. Configuration files are INI with sections
``[basis]``, ``[marks]``, ``[coefficients]``, ``[potential]`` and ``[run]``.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .coefficients import (CoefficientSet, derive_drift_from_potential,
                           derive_intensity_from_potential)
from .errors import ConfigError, IntensityRangeError, ScenarioError
from .girsanov import ide_residual, pure_jump_ide_residual
from .integrator import SimulationConfig
from .noise import IntensityFunction, MarkSpace
from .potentials import ModeExponentialPotential
from .spectral import Pairing, SpectralBasis

KINDS = ("closed_form", "pure_jump", "jump_only", "heat", "nonlinear")
IDE_TOL = 1e-8
MAX_GROWTH = 4.0
CONFIG_DIR = Path(__file__).with_name("configs")


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything needed to rebuild a scenario; mirrors the config keys."""

    kind: str = "closed_form"
    basis_rule: str = "dirichlet"
    dimension: int = 8
    n_modes: int | None = None
    masses: tuple = (2.0,)
    projections: tuple | None = (-0.7,)
    payloads: tuple | None = None
    sigma: str = "identity"
    drift: tuple | None = None
    drift_sine: float = 0.0
    intensity: tuple | None = None
    k: int = 1
    alpha0: float = 0.5
    beta0: float = 0.0
    max_growth: float = MAX_GROWTH
    horizon: float = 1.0
    steps: int = 1024
    paths: int = 1000
    seed: int = 20240521
    initial_state: tuple = (0.0,)
    pairing: str = "h"
    chunk_size: int = 128
    dims: tuple = (4, 8, 16)
    n_ref: int = 64
    coarse_steps: int = 64
    halvings: int = 4
    ladder_paths: int | None = None
    picard_iterations: int = 8
    drift_perturbation: float = 0.1
    ide_points: int = 100

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        if self.basis_rule != "dirichlet":
            raise ConfigError("only the 'dirichlet' basis rule (lambda_j = j^2) is supported")
        if self.dimension < 1:
            raise ConfigError("dimension must be positive")
        try:
            Pairing.parse(self.pairing)
        except ValueError as err:
            raise ConfigError(str(err)) from None
        if self.horizon <= 0 or self.steps < 1 or self.paths < 1:
            raise ConfigError("horizon, steps and paths must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @property
    def modes(self):
        return self.dimension if self.n_modes is None else self.n_modes

    def echo(self):
        """Plain dict of every field, for report headers."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def with_overrides(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self


@dataclass
class Scenario:
    """A validated scenario ready to simulate."""

    spec: ScenarioSpec
    basis: SpectralBasis
    marks: MarkSpace
    coefficients: CoefficientSet
    intensity: IntensityFunction
    potential: object = None
    degenerate: bool = False
    checks: dict = field(default_factory=dict)

    @property
    def pure_jump(self):
        return not self.coefficients.has_diffusion

    @property
    def pairing(self):
        return Pairing.parse(self.spec.pairing)

    def config(self, steps=None, n_modes=None):
        spec = self.spec
        x0 = np.zeros(self.basis.dimension)
        init = np.asarray(spec.initial_state, dtype=float)
        if init.size == 1:
            x0[:] = init[0]
        elif init.size == x0.size:
            x0[:] = init
        else:
            raise ConfigError("initial_state must have one entry or one per mode")
        return SimulationConfig(spec.horizon, spec.steps if steps is None else int(steps),
                                spec.modes if n_modes is None else int(n_modes), x0,
                                basis=self.basis)

    def perturbed(self, delta):
        """Same scenario with ``b`` shifted by ``delta * e_k``; the potential is kept."""
        e_k = self.basis.unit(self.spec.k)
        out = replace(self, coefficients=self.coefficients.perturb_drift(delta * e_k))
        out.checks = dict(self.checks, drift_perturbation=float(delta))
        return out


def _marks(spec):
    masses = np.asarray(spec.masses, dtype=float)
    if spec.payloads is not None:
        payloads = np.asarray(spec.payloads, dtype=float).reshape(masses.size, -1)
        if payloads.shape[1] != spec.dimension:
            raise ConfigError("payload rows must have one entry per mode")
        return MarkSpace(masses, payloads)
    if spec.projections is None:
        return MarkSpace.empty(spec.dimension)
    proj = np.asarray(spec.projections, dtype=float)
    if proj.size != masses.size:
        raise ConfigError("one projection per atom mass is required")
    if not 1 <= spec.k <= spec.dimension:
        raise ConfigError("potential mode k outside the basis")
    return MarkSpace.along_mode(spec.dimension, spec.k, proj, masses)


def _sigma(spec):
    if spec.sigma in ("none", "zero", "0"):
        return None
    if spec.sigma == "identity":
        return np.ones(spec.dimension)
    try:
        return np.full(spec.dimension, float(spec.sigma))
    except ValueError:
        raise ConfigError(f"sigma must be 'identity', 'none' or a number, got {spec.sigma!r}") from None


def _probe_points(basis, horizon, rng, n_states=4):
    times = np.linspace(0.0, horizon, 9)
    states = [np.zeros(basis.dimension)] + list(rng.normal(size=(n_states - 1, basis.dimension)))
    return [(t, x) for t in times for x in states]


def _check_rng(spec):
    # fixed stream, independent of the path substreams
    return np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(2 ** 32 - 1,)))


def build_closed_form_scenario(spec):
    """Potential-derived jump-diffusion (or pure-jump) scenario.

    ``v(t, x) = alpha(t) x_k + beta(t)`` with ``alpha = alpha0 exp(lambda_k t)``.
    The drift comes from ``b = sigma sigma^* grad v`` (for the pure-jump
    kind ``b`` is the configured constant), the intensity from
    ``lambda = exp{v(t, x + f) - v(t, x)} = exp{alpha(t) c_i}``, and ``beta``
    solves the remaining scalar ODE by quadrature.

    Raises
    ------
    ScenarioError
        If any payload projection ``c_i`` is not negative, ``alpha0 < 0``,
        ``T lambda_k`` exceeds ``max_growth``, or an admissibility check fails.
    IntensityRangeError
        If ``lambda`` underflows to zero on ``[0, T]``.
    """
    if spec.kind not in ("closed_form", "pure_jump"):
        raise ScenarioError(f"{spec.kind!r} is not a closed-form kind")
    basis = SpectralBasis.dirichlet(spec.dimension)
    marks = _marks(spec)
    k = int(spec.k)
    if not 1 <= k <= basis.dimension:
        raise ScenarioError(f"mode index {k} outside 1..{basis.dimension}")
    e_k = basis.unit(k)
    c = marks.payloads @ e_k
    if marks.n_atoms == 0:
        raise ScenarioError("the closed-form scenario needs at least one jump atom")
    if np.any(c >= 0):
        raise ScenarioError(f"payload projections on e_{k} must be negative, got {c.tolist()}")
    if spec.alpha0 < 0:
        raise ScenarioError("alpha0 must be nonnegative")
    lam_k = float(basis.eigenvalues[k - 1])
    if spec.horizon * lam_k > spec.max_growth:
        raise ScenarioError(
            f"T * lambda_k = {spec.horizon * lam_k:g} exceeds {spec.max_growth:g}; alpha(t) grows too fast")
    alpha_T = spec.alpha0 * math.exp(lam_k * spec.horizon)
    if np.any(np.exp(alpha_T * c) <= 0):
        raise IntensityRangeError("intensity underflows to zero before the horizon")

    pure = spec.kind == "pure_jump"
    if pure:
        sigma = None
        b0 = np.zeros(basis.dimension) if spec.drift is None else np.asarray(spec.drift, dtype=float)
        if b0.shape != (basis.dimension,):
            raise ConfigError("drift must have one entry per mode")
        weight, offset = 0.0, float(b0[k - 1])
    else:
        sigma = _sigma(spec)
        if sigma is None:
            raise ScenarioError("the jump-diffusion closed form needs a diffusion; use kind=pure_jump")
        weight, offset = float(np.sum(sigma * sigma * e_k * e_k)), 0.0
    v = ModeExponentialPotential(basis, k, spec.alpha0, spec.beta0, c, marks.masses, spec.horizon,
                                 diffusion_weight=weight, drift_offset=offset)
    shell = CoefficientSet(basis.dimension, diffusion=sigma, jump=marks.payloads)
    if pure:
        cs = CoefficientSet(basis.dimension, drift=b0, jump=marks.payloads)
    else:
        cs = shell.with_drift(derive_drift_from_potential(v, shell))
    rng = _check_rng(spec)
    lam = derive_intensity_from_potential(v, cs, marks, _probe_points(basis, spec.horizon, rng))
    degenerate = spec.alpha0 == 0.0
    scenario = Scenario(spec, basis, marks, cs, lam, v, degenerate)
    scenario.checks = admissibility(scenario, rng)
    return scenario


def admissibility(scenario, rng):
    """Drift round-trip, intensity band and IDE residual at random points.

    Raises ``ScenarioError`` on the first failure; returns the measured values.
    """
    spec, basis, cs, v = scenario.spec, scenario.basis, scenario.coefficients, scenario.potential
    n = int(spec.ide_points)
    t = rng.uniform(0.0, spec.horizon, n)
    x = rng.normal(size=(n, basis.dimension))
    if scenario.pure_jump:
        drift_err = 0.0
        res = pure_jump_ide_residual(v, cs, scenario.marks, t, x)
    else:
        # b = sigma sigma^* e_k alpha(t), computed without going through the potential
        sig = cs.sigma_matrix(t, x)
        e_k = basis.unit(spec.k)
        expect = np.einsum("pij,pkj,k->pi", sig, sig, e_k) * v.alpha(t)[:, None]
        drift_err = float(np.max(np.abs(cs.b(t, x) - expect)))
        res = ide_residual(v, cs, scenario.marks, t, x, Pairing.H)
    grid = np.linspace(0.0, spec.horizon, 65)
    rates = scenario.intensity.rates(grid)
    band_ok = bool(np.all(rates > 0) and np.all(rates <= 1))
    ide_max = float(np.max(np.abs(res)))
    if drift_err > 1e-12 * max(1.0, float(np.max(np.abs(v.alpha(t))))):
        raise ScenarioError(f"drift does not match sigma sigma^* grad v (error {drift_err:.3e})")
    if not band_ok:
        raise ScenarioError("intensity leaves (0, 1] on [0, T]")
    if ide_max > IDE_TOL:
        raise ScenarioError(f"potential fails the IDE: max residual {ide_max:.3e}")
    return {"drift_error": drift_err, "intensity_min": float(rates.min()),
            "intensity_max": float(rates.max()), "ide_max": ide_max}


def build_scenario(spec):
    """Dispatch on ``spec.kind``."""
    if spec.kind in ("closed_form", "pure_jump"):
        return build_closed_form_scenario(spec)
    basis = SpectralBasis.dirichlet(spec.dimension)
    marks = _marks(spec)
    n = basis.dimension
    if spec.kind == "jump_only":
        if spec.intensity is None:
            raise ConfigError("jump_only scenarios need an 'intensity' per atom")
        lam = IntensityFunction.constant(np.asarray(spec.intensity, dtype=float), marks.n_atoms)
        if lam.n_atoms != marks.n_atoms:
            raise ConfigError("one intensity value per atom is required")
        cs = CoefficientSet(n, diffusion=_sigma(spec), jump=marks.payloads if marks.n_atoms else None)
        return Scenario(spec, basis, marks, cs, lam, degenerate=lam.degenerate)
    if spec.kind == "heat":
        cs = CoefficientSet(n, diffusion=_sigma(spec))
        marks = MarkSpace.empty(n)
        lam = IntensityFunction.constant(np.zeros(0), 0)
        return Scenario(spec, basis, marks, cs, lam, degenerate=True)
    # nonlinear: b(x) = drift - drift_sine * sin(x), sigma(x) = s (1 + 0.25 cos x)
    b0 = np.zeros(n) if spec.drift is None else np.asarray(spec.drift, dtype=float)
    if b0.shape != (n,):
        raise ConfigError("drift must have one entry per mode")
    a = float(spec.drift_sine)
    s = _sigma(spec)

    def drift(t, x):
        return b0 - a * np.sin(x)

    def diffusion(t, x):
        return s * (1.0 + 0.25 * np.cos(x))

    def jump(t, x, i):
        return marks.payloads[i] * (1.0 + 0.5 * np.tanh(x))

    lam = (IntensityFunction.constant(np.asarray(spec.intensity, dtype=float), marks.n_atoms)
           if spec.intensity is not None else IntensityFunction.constant([1.0], marks.n_atoms))
    cs = CoefficientSet(n, drift=drift, diffusion=diffusion if s is not None else None,
                        jump=jump if marks.n_atoms else None)
    return Scenario(spec, basis, marks, cs, lam)


# -- configuration files -----------------------------------------------------

_SECTIONS = {
    "basis": {"rule": "basis_rule", "dimension": "dimension", "n_modes": "n_modes"},
    "marks": {"masses": "masses", "projections": "projections", "payloads": "payloads"},
    "coefficients": {"kind": "kind", "sigma": "sigma", "drift": "drift", "drift_sine": "drift_sine",
                     "intensity": "intensity"},
    "potential": {"k": "k", "alpha0": "alpha0", "beta0": "beta0", "max_growth": "max_growth",
                  "drift_perturbation": "drift_perturbation", "ide_points": "ide_points"},
    "run": {"horizon": "horizon", "steps": "steps", "paths": "paths", "seed": "seed",
            "initial_state": "initial_state", "pairing": "pairing", "chunk_size": "chunk_size",
            "dims": "dims", "n_ref": "n_ref", "coarse_steps": "coarse_steps",
            "halvings": "halvings", "ladder_paths": "ladder_paths",
            "picard_iterations": "picard_iterations"},
}
_INTS = {"dimension", "n_modes", "k", "steps", "paths", "seed", "chunk_size", "n_ref",
         "coarse_steps", "halvings", "ladder_paths", "picard_iterations", "ide_points"}
_FLOATS = {"alpha0", "beta0", "max_growth", "horizon", "drift_sine", "drift_perturbation"}
_VECTORS = {"masses", "projections", "drift", "intensity", "initial_state"}
_STRINGS = {"basis_rule", "kind", "sigma", "pairing"}


def _vector(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def parse_config(text):
    """Parse INI text into a ``ScenarioSpec``; ``ConfigError`` on any problem."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"malformed configuration: {err}") from None
    kw = {}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            name = _SECTIONS[section].get(key)
            if name is None:
                raise ConfigError(f"unknown key '{key}' in [{section}]")
            raw = raw.strip()
            try:
                if name in _INTS:
                    kw[name] = int(raw)
                elif name in _FLOATS:
                    kw[name] = float(raw)
                elif name in _VECTORS:
                    kw[name] = _vector(raw)
                elif name == "dims":
                    kw[name] = tuple(int(v) for v in raw.replace(",", " ").split())
                elif name == "payloads":
                    kw[name] = tuple(_vector(row) for row in raw.split("|") if row.strip())
                else:
                    kw[name] = raw.lower()
            except ValueError:
                raise ConfigError(f"bad value for '{key}' in [{section}]: {raw!r}") from None
    return ScenarioSpec(**kw)


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read configuration {path}: {err}") from None
    return parse_config(text)


def bundled_config(name):
    """Path of a configuration shipped with the package (e.g. ``"closed_form"``)."""
    p = CONFIG_DIR / f"{name}.ini"
    if not p.exists():
        raise ConfigError(f"no bundled configuration named {name!r}")
    return p

"""Driving noise: Brownian mode paths and the thinned marked jump stream.

Every random draw is taken from a substream keyed by ``(seed, path_index,
purpose, level)``, so a path's noise never depends on how many other paths
are simulated or in which order.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, GridError, IntensityRangeError

RATE_TOL = 1e-12


class Purpose(enum.IntEnum):
    BROWNIAN = 0
    JUMPS = 1
    BRIDGE = 2
    REFINE = 3


@dataclass(frozen=True)
class RngStream:
    """Deterministic source of per-path, per-purpose generators."""

    seed: int
    path_index: int = 0

    def __post_init__(self):
        if int(self.seed) < 0 or int(self.seed) >= 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if int(self.path_index) < 0:
            raise ValueError("path_index must be nonnegative")

    def key(self, purpose, level=0):
        return (int(self.path_index), int(Purpose(purpose)), int(level))

    def seed_sequence(self, purpose, level=0):
        return np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.key(purpose, level))

    def generator(self, purpose, level=0):
        return np.random.Generator(np.random.PCG64(self.seed_sequence(purpose, level)))


def _generator(rng, purpose, level=0):
    if isinstance(rng, RngStream):
        return rng.generator(purpose, level)
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError("rng must be an RngStream or a numpy Generator")


@dataclass(frozen=True)
class MarkSpace:
    """Finite set of jump marks with their ``nu`` masses and payload vectors.

    ``large_jump_mass`` records ``nu(U \\ U0)``; it is kept for completeness
    and never sampled.
    """

    masses: np.ndarray
    payloads: np.ndarray
    labels: tuple = ()
    large_jump_mass: float = 0.0

    def __post_init__(self):
        masses = np.array(self.masses, dtype=float).reshape(-1)
        payloads = np.array(self.payloads, dtype=float)
        if payloads.ndim != 2 or payloads.shape[0] != masses.size:
            raise DimensionError("payloads must be an (n_atoms, dimension) array")
        if np.any(masses <= 0) or not np.all(np.isfinite(masses)):
            raise ValueError("atom masses must be finite and strictly positive")
        if self.large_jump_mass < 0:
            raise ValueError("large_jump_mass must be nonnegative")
        labels = tuple(self.labels) or tuple(f"u{i + 1}" for i in range(masses.size))
        if len(labels) != masses.size:
            raise ValueError("one label per atom")
        masses.setflags(write=False)
        payloads.setflags(write=False)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "payloads", payloads)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def empty(cls, dimension):
        return cls(np.zeros(0), np.zeros((0, dimension)))

    @classmethod
    def along_mode(cls, dimension, k, projections, masses):
        """Atoms whose payloads are ``c_i e_k``."""
        projections = np.atleast_1d(np.asarray(projections, dtype=float))
        payloads = np.zeros((projections.size, dimension))
        payloads[:, k - 1] = projections
        return cls(masses, payloads)

    @property
    def n_atoms(self):
        return self.masses.size

    @property
    def dimension(self):
        return self.payloads.shape[1]

    @property
    def total_mass(self):
        return float(np.sum(self.masses))


class IntensityFunction:
    """Thinning probability ``lambda(t, u_i)`` for every atom.

    Parameters
    ----------
    rates : callable
        ``rates(t)`` maps times of any shape to an array of shape
        ``t.shape + (n_atoms,)``.
    n_atoms : int
    declared_min : float, optional
        Lower bound on the rates; defaults to a value supplied by the
        constructor helpers.
    degenerate : bool
        True when the intensity is identically one (no thinning).
    """

    def __init__(self, rates, n_atoms, declared_min=None, degenerate=False, name="intensity"):
        self._rates = rates
        self.n_atoms = int(n_atoms)
        self.declared_min = declared_min
        self.degenerate = bool(degenerate)
        self.name = name
        if declared_min is not None and not 0 < declared_min <= 1:
            raise IntensityRangeError("declared_min must lie in (0, 1]")

    @classmethod
    def constant(cls, values, n_atoms=None):
        values = np.atleast_1d(np.asarray(values, dtype=float))
        if n_atoms is not None and values.size == 1:
            values = np.full(int(n_atoms), values[0])
        _check_band(values)
        values.setflags(write=False)

        def rates(t):
            t = np.asarray(t, dtype=float)
            return np.broadcast_to(values, t.shape + values.shape)

        lo = float(values.min()) if values.size else 1.0
        return cls(rates, values.size, declared_min=lo,
                   degenerate=bool(np.all(values == 1.0)), name="constant")

    def rates(self, t):
        out = np.asarray(self._rates(np.asarray(t, dtype=float)), dtype=float)
        _check_band(out)
        return out

    def __call__(self, t, atom_index):
        return self.rates(t)[..., atom_index]


def _check_band(values):
    if values.size and (not np.all(values > 0) or np.any(values > 1 + RATE_TOL)
                        or not np.all(np.isfinite(values))):
        raise IntensityRangeError(
            f"thinning probability outside (0, 1]: min={np.min(values)!r}, max={np.max(values)!r}"
        )


@dataclass(frozen=True)
class MarkedEvents:
    """Base Poisson events with their thinning draws, sorted by time."""

    times: np.ndarray
    atoms: np.ndarray
    uniforms: np.ndarray
    accepted: np.ndarray

    def __len__(self):
        return self.times.size

    @property
    def base_events(self):
        return list(zip(self.times.tolist(), self.atoms.tolist()))


def uniform_grid(horizon, steps):
    if horizon <= 0:
        raise GridError("horizon must be positive")
    if int(steps) < 0:
        raise GridError("number of steps must be nonnegative")
    if int(steps) == 0:
        return np.zeros(1)
    return np.linspace(0.0, float(horizon), int(steps) + 1)


def check_grid(grid):
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0 or grid[0] != 0.0:
        raise GridError("grid must start at 0")
    if np.any(np.diff(grid) <= 0):
        raise GridError("grid must be strictly increasing")
    return grid


def is_uniform(grid):
    d = np.diff(grid)
    return d.size > 0 and np.allclose(d, d[0], rtol=1e-9, atol=0.0)


def sample_brownian_grid(dimension, grid, rng):
    """Independent ``N(0, dt_k)`` increments, shape ``(K, dimension)``."""
    grid = check_grid(grid)
    dt = np.diff(grid)
    gen = _generator(rng, Purpose.BROWNIAN)
    z = gen.standard_normal((dt.size, int(dimension)))
    return z * np.sqrt(dt)[:, None]


def thin(times, atoms, uniforms, lam):
    if times.size == 0:
        return np.zeros(0, dtype=bool)
    if int(np.max(atoms)) >= lam.n_atoms:
        raise DimensionError("intensity has fewer atoms than the mark space")
    p = lam.rates(times)[np.arange(times.size), atoms]
    return uniforms < p


def sample_marked_jumps(marks, lam, horizon, rng):
    """Base Poisson events of rate ``nu_i`` per atom, thinned by ``lambda``.

    Each base event at ``(t, u)`` is kept when its uniform draw falls below
    ``lambda(t, u)``; the kept events then have compensator
    ``lambda(t, u) dt nu(du)``.
    """
    if horizon <= 0:
        raise GridError("horizon must be positive")
    if lam.n_atoms != marks.n_atoms:
        raise DimensionError("intensity and mark space disagree on the number of atoms")
    gen = _generator(rng, Purpose.JUMPS)
    counts = gen.poisson(marks.masses * horizon)
    total = int(np.sum(counts))
    # (0, T]: events exactly at 0 would precede the initial state
    times = horizon * (1.0 - gen.random(total))
    uniforms = gen.random(total)
    atoms = np.repeat(np.arange(marks.n_atoms), counts)
    order = np.lexsort((atoms, times))
    times, atoms, uniforms = times[order], atoms[order], uniforms[order]
    return MarkedEvents(times, atoms, uniforms, thin(times, atoms, uniforms, lam))


@dataclass(frozen=True)
class NoiseRealization:
    """One path's worth of driving noise.

    The Brownian path is stored through its values ``W(t_k)`` on the grid
    (row 0 is zero) and its values at every base event time, so the
    increment over any sub-interval cut at grid or event times is a
    difference of stored values.
    """

    grid: np.ndarray
    brownian_values: np.ndarray
    event_times: np.ndarray
    event_atoms: np.ndarray
    event_uniforms: np.ndarray
    accepted: np.ndarray
    event_brownian: np.ndarray
    seed: int = 0
    path_index: int = 0
    level: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n_steps(self):
        return self.grid.size - 1

    @property
    def horizon(self):
        return float(self.grid[-1])

    @property
    def dimension(self):
        return self.brownian_values.shape[1]

    @property
    def brownian_increments(self):
        return np.diff(self.brownian_values, axis=0)

    @property
    def base_events(self):
        return list(zip(self.event_times.tolist(), self.event_atoms.tolist()))

    @property
    def accepted_flags(self):
        return self.accepted

    @property
    def event_steps(self):
        """Index ``k`` of the step ``(t_k, t_{k+1}]`` holding each event."""
        return np.searchsorted(self.grid, self.event_times, side="left") - 1

    def rethin(self, lam):
        """Same base events and Brownian path, acceptance recomputed for ``lam``."""
        return replace(self, accepted=thin(self.event_times, self.event_atoms,
                                           self.event_uniforms, lam))

    @property
    def label(self):
        return f"seed={self.seed}:path={self.path_index}:level={self.level}"


def _bridge(t, left_t, left_w, right_t, right_w, z):
    span = right_t - left_t
    frac = (t - left_t) / span
    std = np.sqrt(max((t - left_t) * (right_t - t) / span, 0.0))
    return left_w + frac * (right_w - left_w) + std * z


def _event_brownian(grid, values, times, gen):
    """Brownian values at event times, bridged inside their grid steps."""
    out = np.zeros((times.size, values.shape[1]))
    if times.size == 0:
        return out
    steps = np.searchsorted(grid, times, side="left") - 1
    z = gen.standard_normal(out.shape)
    prev_step, prev_t, prev_w = -1, 0.0, None
    for e in range(times.size):
        k = steps[e]
        if k != prev_step:
            prev_t, prev_w = grid[k], values[k]
            prev_step = k
        out[e] = _bridge(times[e], prev_t, prev_w, grid[k + 1], values[k + 1], z[e])
        prev_t, prev_w = times[e], out[e]
    return out


def sample_noise(dimension, grid, marks, lam, rng):
    """Brownian path, marked jumps and event-time Brownian values for one path."""
    grid = check_grid(grid)
    stream = rng if isinstance(rng, RngStream) else None
    # same draws as sample_brownian_grid, accumulated in place
    values = np.empty((grid.size, int(dimension)))
    values[0] = 0.0
    _generator(rng, Purpose.BROWNIAN).standard_normal(out=values[1:])
    values[1:] *= np.sqrt(np.diff(grid))[:, None]
    np.add.accumulate(values[1:], axis=0, out=values[1:])
    if grid.size > 1:
        events = sample_marked_jumps(marks, lam, grid[-1], rng)
    else:
        empty = np.zeros(0)
        events = MarkedEvents(empty, np.zeros(0, dtype=int), empty, np.zeros(0, dtype=bool))
    ev_w = _event_brownian(grid, values, events.times, _generator(rng, Purpose.BRIDGE))
    return NoiseRealization(
        grid=grid,
        brownian_values=values,
        event_times=events.times,
        event_atoms=events.atoms,
        event_uniforms=events.uniforms,
        accepted=events.accepted,
        event_brownian=ev_w,
        seed=stream.seed if stream else 0,
        path_index=stream.path_index if stream else 0,
    )


def refine_noise(nr, rng=None):
    """Halve every step of a uniform grid, keeping the coarse path intact.

    Mid-point Brownian values are drawn from the bridge between the nearest
    known values (grid points or event times), so the refined path is an
    exact sample of the same Brownian motion. Jump events and their
    acceptance flags are unchanged.
    """
    if not is_uniform(nr.grid):
        raise GridError("refine_noise requires a uniform grid")
    K = nr.n_steps
    grid = nr.grid
    if rng is None:
        gen = RngStream(nr.seed, nr.path_index).generator(Purpose.REFINE, nr.level + 1)
    else:
        gen = _generator(rng, Purpose.REFINE, nr.level + 1)
    z = gen.standard_normal((K, nr.dimension))
    mids = 0.5 * (grid[:-1] + grid[1:])
    w = nr.brownian_values
    mid_w = 0.5 * (w[:-1] + w[1:]) + np.sqrt(np.diff(grid) / 4.0)[:, None] * z

    steps = nr.event_steps
    for k in np.unique(steps):
        sel = np.nonzero(steps == k)[0]
        ts = np.concatenate([[grid[k]], nr.event_times[sel], [grid[k + 1]]])
        ws = np.vstack([w[k], nr.event_brownian[sel], w[k + 1]])
        m = mids[k]
        hit = np.nonzero(ts == m)[0]
        if hit.size:
            mid_w[k] = ws[hit[0]]
            continue
        r = int(np.searchsorted(ts, m))
        mid_w[k] = _bridge(m, ts[r - 1], ws[r - 1], ts[r], ws[r], z[k])

    new_grid = np.empty(2 * K + 1)
    new_grid[0::2] = grid
    new_grid[1::2] = mids
    new_w = np.empty((2 * K + 1, nr.dimension))
    new_w[0::2] = w
    new_w[1::2] = mid_w
    return replace(nr, grid=new_grid, brownian_values=new_w, level=nr.level + 1)

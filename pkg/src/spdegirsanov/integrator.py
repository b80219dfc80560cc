"""Jump-adapted exponential Euler for the Galerkin system, plus a Picard oracle.

On each sub-interval between grid and accepted jump times,

    X(t + h) = exp(hA) [X(t) + beta(t, X(t)) h + sigma(t, X(t)) dW],

with ``beta`` the drift minus the jump compensator; an accepted jump at
``(tau, u)`` then adds ``f(tau, X(tau-), u)``.

Batches of paths are advanced together. Inside grid step ``k`` every path
takes ``m_k + 1`` sub-steps, where ``m_k`` is the largest number of
accepted events any path has in that step; paths with fewer events pad with
zero-length sub-steps, which leave the state unchanged. All paths therefore
share sub-step indices and the uniform grid points sit at the same index
for every path.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .coefficients import effective_drift
from .errors import DimensionError, GridError, PicardDivergenceError, SimulationError
from .noise import RngStream, sample_noise, uniform_grid
from .spectral import SpectralBasis, mode_mask


@dataclass(frozen=True)
class SimulationConfig:
    horizon: float
    steps: int
    n_modes: int
    initial_state: np.ndarray
    scheme: str = "exp_euler"
    jump_adapted: bool = True
    basis: SpectralBasis | None = None

    def __post_init__(self):
        if self.horizon <= 0:
            raise GridError("horizon must be positive")
        if int(self.steps) < 1:
            raise GridError("at least one time step is required")
        if int(self.n_modes) < 1:
            raise DimensionError("n_modes must be positive")
        x0 = np.array(self.initial_state, dtype=float).reshape(-1)
        if not np.all(np.isfinite(x0)):
            raise ValueError("initial state must be finite")
        if int(self.n_modes) > x0.size:
            raise DimensionError("n_modes exceeds the state dimension")
        if self.scheme != "exp_euler":
            raise ValueError(f"unsupported scheme {self.scheme!r}")
        x0.setflags(write=False)
        object.__setattr__(self, "initial_state", x0)
        basis = SpectralBasis.dirichlet(x0.size) if self.basis is None else self.basis
        if basis.dimension != x0.size:
            raise DimensionError("basis and initial state disagree on dimension")
        object.__setattr__(self, "basis", basis)

    @property
    def dimension(self):
        return self.initial_state.size

    @property
    def grid(self):
        return uniform_grid(self.horizon, self.steps)

    @property
    def dt(self):
        return self.horizon / self.steps

    def replace(self, **changes):
        kw = dict(horizon=self.horizon, steps=self.steps, n_modes=self.n_modes,
                  initial_state=self.initial_state, scheme=self.scheme,
                  jump_adapted=self.jump_adapted, basis=self.basis)
        kw.update(changes)
        return SimulationConfig(**kw)


@dataclass
class PathRecord:
    """One trajectory on its own grid (uniform points plus accepted jump times).

    ``states[i]`` is the value at ``times[i]`` after any jump there and
    ``left_states[i]`` the left limit. ``dW[i]`` is the Brownian increment
    over ``[times[i], times[i+1]]``; ``jump_atoms[i]`` is the atom that
    jumped at ``times[i]`` or -1.
    """

    times: np.ndarray
    states: np.ndarray
    left_states: np.ndarray
    dW: np.ndarray
    jump_atoms: np.ndarray
    grid_index: np.ndarray
    n_modes: int
    noise_ref: str = ""
    diffusion_free: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def jump_log(self):
        idx = np.nonzero(self.jump_atoms >= 0)[0]
        return [(float(self.times[i]), int(self.jump_atoms[i])) for i in idx]

    @property
    def initial_state(self):
        return self.states[0]

    def as_batch(self):
        return PathBatch(
            times=self.times[None], states=self.states[None], left_states=self.left_states[None],
            dW=self.dW[None], jump_atoms=self.jump_atoms[None], grid_index=self.grid_index,
            n_modes=np.array([self.n_modes]), noise_refs=(self.noise_ref,),
            diffusion_free=self.diffusion_free,
        )

    def to_csv(self, handle=None):
        """Rows ``time, mode_1..mode_n, is_jump, atom_index``.

        A jump time gets two rows: the left limit (``is_jump=0``) followed by
        the post-jump state (``is_jump=1``).
        """
        out = handle if handle is not None else io.StringIO()
        n = self.states.shape[1]
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["time"] + [f"mode_{j + 1}" for j in range(n)] + ["is_jump", "atom_index"])
        for i, t in enumerate(self.times):
            a = int(self.jump_atoms[i])
            if a >= 0:
                w.writerow([repr(float(t))] + [repr(float(v)) for v in self.left_states[i]] + [0, -1])
            w.writerow([repr(float(t))] + [repr(float(v)) for v in self.states[i]]
                       + [1 if a >= 0 else 0, a])
        return out.getvalue() if handle is None else None


@dataclass
class PathBatch:
    """Several trajectories sharing a padded sub-step layout (leading path axis)."""

    times: np.ndarray
    states: np.ndarray | None
    left_states: np.ndarray | None
    dW: np.ndarray | None
    jump_atoms: np.ndarray
    grid_index: np.ndarray
    n_modes: np.ndarray
    noise_refs: tuple = ()
    diffusion_free: bool = False
    final_states: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return self.times.shape[0]

    @property
    def initial_states(self):
        return self.states[:, 0]

    def accepted_counts(self, n_atoms):
        counts = np.zeros((len(self), n_atoms), dtype=int)
        for a in range(n_atoms):
            counts[:, a] = np.sum(self.jump_atoms == a, axis=1)
        return counts

    def path(self, i):
        """Single-path record with padding sub-steps removed."""
        if self.states is None:
            raise ValueError("batch was simulated without full recording")
        h = np.diff(self.times[i])
        keep = np.concatenate([[0], 1 + np.nonzero((h > 0) | (self.jump_atoms[i, 1:] >= 0))[0]])
        times = self.times[i, keep]
        grid_pts = self.times[i, self.grid_index]
        dW = np.zeros((keep.size - 1, self.dW.shape[-1]))
        # the kept sub-step ending at keep[j+1] is sub-step keep[j+1]-1; padding dW is zero
        dW[:] = self.dW[i, keep[1:] - 1]
        return PathRecord(
            times=times, states=self.states[i, keep], left_states=self.left_states[i, keep],
            dW=dW, jump_atoms=self.jump_atoms[i, keep],
            grid_index=np.searchsorted(times, grid_pts), n_modes=int(self.n_modes[i]),
            noise_ref=self.noise_refs[i] if self.noise_refs else "",
            diffusion_free=self.diffusion_free,
            diagnostics=dict(self.diagnostics),
        )


@dataclass
class _Plan:
    grid: np.ndarray
    values: np.ndarray          # (P, K+1, N) Brownian path values
    step_of_sub: np.ndarray     # (S,)
    t_end: np.ndarray           # (P, S)
    overrides: dict             # sub-step -> (paths, W values at event times)
    jump_atoms: np.ndarray      # (P, S+1)
    grid_index: np.ndarray      # (K+1,)

    @property
    def n_sub(self):
        return self.step_of_sub.size

    @property
    def times(self):
        return np.hstack([np.zeros((self.t_end.shape[0], 1)), self.t_end])


def _build_plan(noises, jump_adapted=True):
    grid = noises[0].grid
    for nz in noises[1:]:
        if not np.array_equal(nz.grid, grid):
            raise GridError("all noise realizations in a batch must share one grid")
    K = grid.size - 1
    P = len(noises)
    events = []
    counts = np.zeros((P, K), dtype=int)
    for p, nz in enumerate(noises):
        acc = np.nonzero(nz.accepted)[0]
        times = nz.event_times[acc]
        w = nz.event_brownian[acc]
        steps = np.searchsorted(grid, times, side="left") - 1
        if not jump_adapted:
            # jumps applied at the right end of their step
            times = grid[steps + 1]
            w = nz.brownian_values[steps + 1]
        events.append((times, nz.event_atoms[acc], w, steps))
        np.add.at(counts[p], steps, 1)
    per_step = counts.max(axis=0) + 1
    offset = np.concatenate([[0], np.cumsum(per_step)])
    S = int(offset[-1])
    step_of_sub = np.repeat(np.arange(K), per_step)
    t_end = np.broadcast_to(grid[step_of_sub + 1], (P, S)).copy()
    jump_atoms = np.full((P, S + 1), -1, dtype=int)
    overrides = {}
    for p, (times, atoms, w, steps) in enumerate(events):
        rank = np.zeros_like(steps)
        for e in range(1, steps.size):
            rank[e] = rank[e - 1] + 1 if steps[e] == steps[e - 1] else 0
        subs = offset[steps] + rank
        t_end[p, subs] = times
        jump_atoms[p, subs + 1] = atoms
        for s, wv in zip(subs.tolist(), w):
            overrides.setdefault(s, ([], []))
            overrides[s][0].append(p)
            overrides[s][1].append(wv)
    overrides = {s: (np.array(ps), np.array(vals)) for s, (ps, vals) in overrides.items()}
    values = np.stack([nz.brownian_values for nz in noises])
    return _Plan(grid, values, step_of_sub, t_end, overrides, jump_atoms, offset)


def _masks(dimension, row_modes):
    return np.stack([mode_mask(dimension, int(m)) for m in row_modes])


def _brownian_increments(plan):
    """Yield ``dW`` of shape ``(P, N)`` for each sub-step in order."""
    vals = plan.values
    w_prev = vals[:, 0]
    for s in range(plan.n_sub):
        w_end = vals[:, plan.step_of_sub[s] + 1]
        ov = plan.overrides.get(s)
        if ov is not None:
            w_end = w_end.copy()
            w_end[ov[0]] = ov[1]
        yield w_end - w_prev
        w_prev = w_end


def simulate_batch(cfg, cs, marks, lam, noises, record="full", layer_modes=None):
    """Advance a batch of paths on their shared padded sub-step layout.

    Parameters
    ----------
    cfg : SimulationConfig
    cs : CoefficientSet
    marks : MarkSpace
    lam : IntensityFunction
    noises : sequence of NoiseRealization
    record : {"full", "final"}
        ``"final"`` keeps only the terminal states.
    layer_modes : sequence of int, optional
        Galerkin dimensions to run side by side on the same noise. Rows of
        the result are ordered layer by layer; the default is the single
        layer ``cfg.n_modes``.

    Returns
    -------
    PathBatch
    """
    noises = list(noises)
    if not noises:
        raise ValueError("no noise realizations given")
    if record not in ("full", "final"):
        raise ValueError("record must be 'full' or 'final'")
    N = cfg.dimension
    if cs.dimension != N or noises[0].dimension != N or marks.dimension != N:
        raise DimensionError("configuration, coefficients, marks and noise disagree on dimension")
    if noises[0].n_steps != cfg.steps or not math.isclose(noises[0].horizon, cfg.horizon):
        raise GridError("noise grid does not match the configuration")
    layer_modes = [cfg.n_modes] if layer_modes is None else [int(m) for m in layer_modes]
    if any(m < 1 or m > N for m in layer_modes):
        raise DimensionError("Galerkin dimension outside 1..n")
    L, P = len(layer_modes), len(noises)
    R = L * P
    plan = _build_plan(noises, cfg.jump_adapted)
    mask = _masks(N, layer_modes)[:, None, :]
    eig = cfg.basis.eigenvalues
    S = plan.n_sub
    times = plan.times
    steps_h = np.diff(times, axis=1)
    uniform = np.all(steps_h == steps_h[:1], axis=0)
    full = record == "full"

    x = np.broadcast_to(cfg.initial_state, (L, P, N)) * mask
    if full:
        states = np.empty((S + 1, L, P, N))
        left = np.empty((S + 1, L, P, N))
        dWs = np.empty((S, P, N))
        states[0] = left[0] = x
    sig = cs.constant_diffusion
    sig_kind = cs.diffusion_kind
    drift_const = cs.constant_drift
    use_jumps = cs.has_jumps and marks.n_atoms > 0
    decay_cache = {}
    for s, dW in enumerate(_brownian_increments(plan)):
        h = steps_h[:, s]
        if uniform[s]:
            h0 = h[0]
            dec = decay_cache.get(h0)
            if dec is None:
                dec = decay_cache[h0] = np.exp(-eig * h0)
            hcol = h0
        else:
            dec = np.exp(-eig * h[:, None])
            hcol = h[:, None]
        t = times[:, s]
        if drift_const is not None and not use_jumps:
            incr = drift_const * hcol
        elif cs.has_drift or use_jumps:
            tr, xr = np.tile(t, L), x.reshape(R, N)
            drift = effective_drift(cs, marks, lam, tr, xr) if use_jumps else cs.b(tr, xr)
            incr = drift.reshape(L, P, N) * hcol
        else:
            incr = None
        if sig is not None:
            noise = sig * dW if sig_kind == "diagonal" else dW @ sig.T
            incr = noise if incr is None else incr + noise
        elif cs.has_diffusion:
            noise = cs.sigma_apply(np.tile(t, L), x.reshape(R, N), np.tile(dW, (L, 1)))
            noise = noise.reshape(L, P, N)
            incr = noise if incr is None else incr + noise
        pre = dec * x if incr is None else dec * (x + incr * mask)
        x = pre
        if use_jumps:
            atoms = plan.jump_atoms[:, s + 1]
            if np.any(atoms >= 0):
                x = pre.copy()
                t_next = times[:, s + 1]
                for a in np.unique(atoms[atoms >= 0]):
                    rows = np.nonzero(atoms == a)[0]
                    xs = pre[:, rows].reshape(-1, N)
                    kick = cs.f(np.tile(t_next[rows], L), xs, int(a)).reshape(L, rows.size, N)
                    x[:, rows] += kick * mask
        if full:
            states[s + 1] = x
            left[s + 1] = pre
            dWs[s] = dW
        elif s % 64 == 63 or s == S - 1:
            _check_finite(x, times, s, noises, full_check=False)
    if full:
        _check_finite(states, times, None, noises, full_check=True)
    refs = tuple(nz.label for nz in noises) * L
    modes = np.repeat(layer_modes, P)
    times_r = np.tile(times, (L, 1))
    atoms_r = np.tile(plan.jump_atoms, (L, 1))
    if not full:
        return PathBatch(times_r, None, None, None, atoms_r, plan.grid_index, modes, refs,
                         diffusion_free=not cs.has_diffusion, final_states=x.reshape(R, N))
    states = states.transpose(1, 2, 0, 3).reshape(R, S + 1, N)
    left = left.transpose(1, 2, 0, 3).reshape(R, S + 1, N)
    dWs = np.tile(dWs.transpose(1, 0, 2), (L, 1, 1))
    return PathBatch(times_r, states, left, dWs, atoms_r, plan.grid_index, modes, refs,
                     diffusion_free=not cs.has_diffusion, final_states=x.reshape(R, N))


def _check_finite(arr, times, s, noises, full_check):
    """Raise ``SimulationError`` naming the first path and time with a non-finite state."""
    if full_check:
        bad = ~np.all(np.isfinite(arr), axis=-1)        # (S+1, L, P)
        if not np.any(bad):
            return
        where = np.argwhere(bad)
        i = int(np.argmin(where[:, 0]))
        step, p = int(where[i, 0]), int(where[i, 2])
        t = float(times[p, step])
    else:
        bad = ~np.all(np.isfinite(arr), axis=-1)        # (L, P)
        if not np.any(bad):
            return
        p = int(np.argwhere(bad)[0][1])
        t = float(times[p, s + 1])
    nz = noises[p]
    raise SimulationError(f"non-finite state by t={t!r} on path {nz.path_index} (seed {nz.seed})",
                          time=t, path_index=nz.path_index, seed=nz.seed)


def simulate_path(cfg, cs, marks, lam, noise):
    """Single mild-solution trajectory for one noise realization."""
    return simulate_batch(cfg, cs, marks, lam, [noise]).path(0)


def picard_reference_path(cfg, cs, marks, lam, noise, iterations=8, divergence_window=3):
    """Picard iterates of the discretized mild-solution map on fixed noise.

    Starting from ``Y0(t) = exp(tA) x0``, each iterate is

        J(Y)(t_m) = exp(t_m A) x0 + sum_s Phi(h_s) beta(t_s, Y_s)
                    + sum_s exp((t_m - t_s) A) sigma(t_s, Y_s) dW_s
                    + sum_{jumps <= t_m} exp((t_m - tau) A) f(tau, Y(tau-), u),

    where the semigroup kernel is integrated exactly over each cell
    (``Phi(h) = (1 - exp(-lambda h)) / lambda`` per mode, composed with the
    decay to ``t_m``) while the coefficients are frozen at the left end.
    The result is therefore a different quadrature of the same mild form
    than the exponential Euler recursion, and agrees with it to ``O(dt)``.

    The sup-distances between successive iterates are stored in
    ``diagnostics["distances"]``.
    """
    if int(iterations) < 1:
        raise ValueError("at least one Picard iteration is required")
    N = cfg.dimension
    plan = _build_plan([noise], cfg.jump_adapted)
    mask = _masks(N, [cfg.n_modes])[0]
    eig = cfg.basis.eigenvalues
    times = plan.times[0]
    S = plan.n_sub
    h = np.diff(times)
    dec = np.exp(-eig * h[:, None])
    with np.errstate(invalid="ignore"):
        phi = np.where(h[:, None] > 0, -np.expm1(-eig * h[:, None]) / eig, 0.0)
    dW = np.array([d[0] for d in _brownian_increments(plan)]).reshape(S, N)
    atoms = plan.jump_atoms[0]
    use_jumps = cs.has_jumps and marks.n_atoms > 0

    x0 = cfg.initial_state * mask
    y = np.exp(-eig * times[:, None]) * x0
    y_left = y.copy()
    distances = []
    for _ in range(int(iterations)):
        drift = effective_drift(cs, marks, lam, times[:-1], y[:-1]) if use_jumps else cs.b(times[:-1], y[:-1])
        noise_term = cs.sigma_apply(times[:-1], y[:-1], dW) if cs.has_diffusion else np.zeros_like(dW)
        z = np.empty_like(y)
        z_left = np.empty_like(y)
        z[0] = z_left[0] = x0
        jump_rows = np.nonzero(atoms >= 0)[0]
        kicks = np.zeros_like(y)
        for i in jump_rows:
            kicks[i] = cs.f(times[i], y_left[i], int(atoms[i])) * mask
        for s in range(S):
            z_left[s + 1] = dec[s] * z[s] + (phi[s] * drift[s] + dec[s] * noise_term[s]) * mask
            z[s + 1] = z_left[s + 1] + kicks[s + 1]
        if not np.all(np.isfinite(z)):
            raise PicardDivergenceError("non-finite Picard iterate", seed=noise.seed,
                                        path_index=noise.path_index)
        d = float(max(np.max(np.linalg.norm(z - y, axis=1)),
                      np.max(np.linalg.norm(z_left - y_left, axis=1))))
        distances.append(d)
        y, y_left = z, z_left
        tail = distances[-(divergence_window + 1):]
        if len(tail) == divergence_window + 1 and all(b > a for a, b in zip(tail, tail[1:])) \
                and tail[-1] > 1e-12:
            raise PicardDivergenceError(
                f"Picard distance grew for {divergence_window} consecutive iterates: {tail}",
                seed=noise.seed, path_index=noise.path_index)
    batch = PathBatch(times[None], y[None], y_left[None], dW[None], atoms[None], plan.grid_index,
                      np.array([cfg.n_modes]), (noise.label,), diffusion_free=not cs.has_diffusion)
    rec = batch.path(0)
    rec.diagnostics["distances"] = distances
    return rec


# -- ensembles ---------------------------------------------------------------

@dataclass
class EnsembleSummary:
    n_paths: int
    mean: dict
    variance: dict
    standard_error: dict
    seed_ledger: dict
    values: dict = field(default_factory=dict, repr=False)


def fsum_stats(x):
    """Mean, unbiased variance and standard error with exactly rounded sums."""
    x = np.asarray(x, dtype=float).reshape(-1)
    n = x.size
    mean = math.fsum(x.tolist()) / n
    var = math.fsum(((x - mean) ** 2).tolist()) / (n - 1) if n > 1 else 0.0
    return mean, var, math.sqrt(var / n) if n else math.nan


def chunk_ranges(n_paths, chunk_size):
    return [range(a, min(a + chunk_size, n_paths)) for a in range(0, n_paths, chunk_size)]


def map_chunks(fn, n_paths, chunk_size=128, workers=1):
    """Apply ``fn(range_of_path_indices)`` to fixed chunks; results in chunk order.

    Chunk boundaries do not depend on ``workers``, so results are identical
    for any worker count.
    """
    chunks = chunk_ranges(int(n_paths), int(chunk_size))
    if int(workers) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=int(workers)) as pool:
        return list(pool.map(fn, chunks))


def ensemble_noises(cfg, marks, lam, seed, paths):
    grid = cfg.grid
    return [sample_noise(cfg.dimension, grid, marks, lam, RngStream(seed, p)) for p in paths]


def simulate_ensemble(cfg, cs, marks, lam, n_paths, functionals, seed, workers=1, chunk_size=128,
                      record="full"):
    """Monte Carlo summary of path functionals.

    ``functionals`` maps names to callables ``fn(batch) -> array (P,)``.
    """
    if int(n_paths) < 2:
        raise ValueError("an ensemble needs at least two paths")

    def run(paths):
        noises = ensemble_noises(cfg, marks, lam, seed, paths)
        batch = simulate_batch(cfg, cs, marks, lam, noises, record=record)
        return {name: np.asarray(fn(batch), dtype=float) for name, fn in functionals.items()}

    parts = map_chunks(run, n_paths, chunk_size, workers)
    values = {name: np.concatenate([p[name] for p in parts]) for name in functionals}
    mean, var, se = {}, {}, {}
    for name, v in values.items():
        mean[name], var[name], se[name] = fsum_stats(v)
    return EnsembleSummary(int(n_paths), mean, var, se,
                           {"master_seed": int(seed), "paths": [0, int(n_paths)]}, values)


def galerkin_convergence_table(cfg, cs, marks, lam, dims, n_ref, n_paths, seed, workers=1,
                               chunk_size=32):
    """Monte Carlo ``E||X^n_T - X^{n_ref}_T||^2`` for each ``n`` in ``dims``.

    All dimensions are driven by the same noise (one Brownian path per mode
    and one jump stream per path).

    Returns
    -------
    list of dict
        One row per dimension with keys ``n``, ``mean``, ``se``.
    """
    dims = [int(d) for d in dims]
    if any(b <= a for a, b in zip(dims, dims[1:])):
        raise ValueError("dims must be strictly increasing")
    if not dims or dims[0] < 1 or dims[-1] > int(n_ref):
        raise DimensionError("dims must lie in 1..n_ref")
    if int(n_ref) > cfg.dimension:
        raise DimensionError("n_ref exceeds the basis dimension")
    modes = dims + [int(n_ref)]

    def run(paths):
        noises = ensemble_noises(cfg, marks, lam, seed, paths)
        P = len(noises)
        batch = simulate_batch(cfg, cs, marks, lam, noises, record="final", layer_modes=modes)
        xs = batch.final_states.reshape(len(modes), P, -1)
        return np.sum((xs[:-1] - xs[-1]) ** 2, axis=-1)

    parts = map_chunks(run, n_paths, chunk_size, workers)
    err = np.concatenate(parts, axis=1)
    rows = []
    for i, n in enumerate(dims):
        m, _, se = fsum_stats(err[i])
        rows.append({"n": n, "mean": m, "se": se})
    return rows

"""Named verification experiments and the report bundle they produce."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .coefficients import CoefficientSet
from .errors import ConfigError, ScenarioError
from .girsanov import (accumulate_girsanov_log, compensator_change_check, ide_residual,
                       ito_residual, martingale_check, path_independence_residual,
                       pure_jump_girsanov_log, pure_jump_ide_residual)
from .integrator import (SimulationConfig, ensemble_noises, fsum_stats, galerkin_convergence_table,
                         map_chunks, picard_reference_path, simulate_batch, simulate_path)
from .noise import IntensityFunction, MarkSpace, RngStream, refine_noise, sample_noise
from .potentials import QuadraticPotential, ShiftedPotential

IDE_TOL = 1e-8
RATIO_MIN = 0.4
PATH_LEVEL_MAX = 5e-2
DETECTION_SE = 5.0
GALERKIN_FACTOR = 1.5
PICARD_BAND = 0.5
QUADRATIC_TOL = 1e-3
QUADRATIC_STEPS = 2 ** 12


class Experiment(enum.Enum):
    MARTINGALE = "martingale"
    PATH_INDEPENDENCE = "path_independence"
    IDE_RESIDUAL = "ide_residual"
    GALERKIN = "galerkin"
    ITO = "ito"
    PICARD_XCHECK = "picard_xcheck"
    COMPENSATOR = "compensator"
    PURE_JUMP = "pure_jump"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls[str(value).upper()]
        except KeyError:
            try:
                return cls(str(value).lower())
            except ValueError:
                names = ", ".join(e.name for e in cls)
                raise ConfigError(f"unknown experiment {value!r}; expected one of {names}") from None


@dataclass
class ReportBundle:
    """Result tables, verdicts and provenance of one experiment run."""

    experiment: str
    config: dict
    tables: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    version: str = __version__
    seed_ledger: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(self.verdicts.values())

    def add_table(self, name, columns, rows):
        self.tables[name] = {"columns": list(columns), "rows": [list(r) for r in rows]}

    def as_dict(self):
        return {
            "experiment": self.experiment,
            "version": self.version,
            "config": self.config,
            "seed_ledger": self.seed_ledger,
            "tables": self.tables,
            "verdicts": self.verdicts,
            "passed": self.passed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["experiment"], d["config"], d["tables"], d["verdicts"], d["version"],
                   d["seed_ledger"])


def _log_density(scenario, batch):
    if scenario.pure_jump:
        return pure_jump_girsanov_log(batch, scenario.intensity, scenario.marks)
    return accumulate_girsanov_log(batch, scenario.coefficients, scenario.intensity,
                                   scenario.marks, scenario.pairing)


def _ensemble(scenario, cfg, fn, workers, n_paths=None):
    spec = scenario.spec
    n = spec.paths if n_paths is None else n_paths

    def run(paths):
        noises = ensemble_noises(cfg, scenario.marks, scenario.intensity, spec.seed, paths)
        batch = simulate_batch(cfg, scenario.coefficients, scenario.marks, scenario.intensity, noises)
        return fn(batch)

    parts = map_chunks(run, n, spec.chunk_size, workers)
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def _ladder_noises(scenario, cfg_coarse, paths):
    """Per level, the noise of every path; finer levels refine the coarser ones."""
    spec = scenario.spec
    levels = [[sample_noise(cfg_coarse.dimension, cfg_coarse.grid, scenario.marks,
                            scenario.intensity, RngStream(spec.seed, p)) for p in paths]]
    for _ in range(spec.halvings):
        levels.append([refine_noise(nz) for nz in levels[-1]])
    return levels


def _ladder_steps(spec):
    return [spec.coarse_steps * 2 ** i for i in range(spec.halvings + 1)]


def _ladder_paths(spec):
    return spec.paths if spec.ladder_paths is None else spec.ladder_paths


def _log2_ratios(values):
    v = np.asarray(values, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log2(v[:-1] / v[1:])


def _rms(x):
    x = np.asarray(x, dtype=float).reshape(-1)
    return math.sqrt(math.fsum((x * x).tolist()) / x.size)


def _bundle(scenario, experiment):
    spec = scenario.spec
    return ReportBundle(
        experiment.name, spec.echo(),
        seed_ledger={"master_seed": spec.seed, "paths": spec.paths, "chunk_size": spec.chunk_size,
                     "substreams": "SeedSequence(master_seed, spawn_key=(path, purpose, level))"})


def _require_potential(scenario):
    if scenario.potential is None:
        raise ScenarioError("this experiment needs a potential-derived (closed-form) scenario")


# -- experiments -------------------------------------------------------------

def _martingale(scenario, bundle, workers, prefix=""):
    cfg = scenario.config()
    vals = _ensemble(scenario, cfg, lambda b: {"log": _log_density(scenario, b).log_density}, workers)
    rep = martingale_check(vals["log"])
    bundle.add_table(prefix + "martingale", ["n_paths", "mean_density", "standard_error", "target"],
                     [[rep.n_paths, rep.mean_density, rep.density_se, 1.0]])
    bundle.verdicts[prefix + "mean_density_within_3se"] = rep.passed


def _path_independence(scenario, bundle, workers, prefix=""):
    _require_potential(scenario)
    spec = scenario.spec
    steps = _ladder_steps(spec)
    coarse = scenario.config(steps=steps[0])
    perturbed = scenario.perturbed(spec.drift_perturbation)
    v = scenario.potential

    def run(paths):
        levels = _ladder_noises(scenario, coarse, paths)
        out = {}
        for i, (K, noises) in enumerate(zip(steps, levels)):
            cfg = scenario.config(steps=K)
            batch = simulate_batch(cfg, scenario.coefficients, scenario.marks, scenario.intensity, noises)
            r = path_independence_residual(batch, _log_density(scenario, batch), v)
            out[f"level{i}"] = r.max_abs
        pbatch = simulate_batch(cfg, perturbed.coefficients, perturbed.marks, perturbed.intensity,
                                levels[-1])
        out["perturbed"] = path_independence_residual(pbatch, _log_density(perturbed, pbatch), v).max_abs
        return out

    parts = map_chunks(run, _ladder_paths(spec), spec.chunk_size, workers)
    vals = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    rows, levels_rms = [], []
    for i, K in enumerate(steps):
        m, _, se = fsum_stats(vals[f"level{i}"])
        levels_rms.append(_rms(vals[f"level{i}"]))
        rows.append([K, spec.horizon / K, levels_rms[-1], m, se])
    bundle.add_table(prefix + "path_independence",
                     ["steps", "dt", "rms_max_residual", "mean_max_residual", "standard_error"], rows)
    ratios = _log2_ratios(levels_rms)
    bundle.add_table(prefix + "halving_ratios", ["from_steps", "to_steps", "log2_ratio"],
                     [[a, b, float(r)] for a, b, r in zip(steps, steps[1:], ratios)])
    base_m, _, base_se = fsum_stats(vals[f"level{len(steps) - 1}"])
    pert_m, _, pert_se = fsum_stats(vals["perturbed"])
    se = math.hypot(base_se, pert_se)
    bundle.add_table(prefix + "converse_detection",
                     ["drift_perturbation", "mean_unperturbed", "mean_perturbed", "combined_se",
                      "excess_in_se"],
                     [[spec.drift_perturbation, base_m, pert_m, se,
                       (pert_m - base_m) / se if se > 0 else math.inf]])
    bundle.verdicts[prefix + "rms_strictly_decreasing"] = bool(np.all(np.diff(levels_rms) < 0))
    bundle.verdicts[prefix + "mean_log2_ratio_ge_0.4"] = bool(np.mean(ratios) >= RATIO_MIN)
    bundle.verdicts[prefix + "finest_rms_le_5e-2"] = bool(levels_rms[-1] <= PATH_LEVEL_MAX)
    bundle.verdicts[prefix + "perturbation_detected_5se"] = bool(pert_m - base_m >= DETECTION_SE * se)


def _ide(scenario, bundle, prefix=""):
    _require_potential(scenario)
    spec = scenario.spec
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(2 ** 32 - 2,)))
    n = spec.ide_points
    t = rng.uniform(0.0, spec.horizon, n)
    x = rng.normal(size=(n, scenario.basis.dimension))
    v = scenario.potential
    shifted = ShiftedPotential(v, 0.01)
    if scenario.pure_jump:
        res = pure_jump_ide_residual(v, scenario.coefficients, scenario.marks, t, x)
        res_s = pure_jump_ide_residual(shifted, scenario.coefficients, scenario.marks, t, x)
    else:
        res = ide_residual(v, scenario.coefficients, scenario.marks, t, x, scenario.pairing)
        res_s = ide_residual(shifted, scenario.coefficients, scenario.marks, t, x, scenario.pairing)
    max_res = float(np.max(np.abs(res)))
    shift_err = float(np.max(np.abs(res_s - 0.01)))
    bundle.add_table(prefix + "ide_residual", ["points", "max_abs_residual", "max_shift_error"],
                     [[n, max_res, shift_err]])
    bundle.verdicts[prefix + "ide_residual_le_1e-8"] = max_res <= IDE_TOL
    bundle.verdicts[prefix + "time_shift_0.01_within_1e-8"] = shift_err <= IDE_TOL


def heat_tail_oracle(n, horizon, n_terms=1_000_000):
    """``sum_{j > n} (1 - exp(-2 j^2 T)) / (2 j^2)`` for the identity diffusion."""
    j = np.arange(n + 1, n_terms + 1, dtype=float)
    lam = j * j
    head = math.fsum((-np.expm1(-2.0 * lam * horizon) / (2.0 * lam)).tolist())
    return head + 0.5 / n_terms   # sum_{j > J} 1 / (2 j^2) ~ 1 / (2 J)


def _galerkin(scenario, bundle, workers):
    spec = scenario.spec
    cfg = scenario.config(n_modes=scenario.basis.dimension)
    rows = galerkin_convergence_table(cfg, scenario.coefficients, scenario.marks, scenario.intensity,
                                      spec.dims, spec.n_ref, spec.paths, spec.seed, workers,
                                      spec.chunk_size)
    cs = scenario.coefficients
    sig = cs.constant_diffusion
    oracle_ok = (not cs.has_drift and not cs.has_jumps and sig is not None
                 and sig.ndim == 1 and np.all(sig == 1.0) and not np.any(cfg.initial_state)
                 and spec.n_ref == scenario.basis.dimension)
    table = []
    for r in rows:
        oracle = heat_tail_oracle(r["n"], spec.horizon) if oracle_ok else None
        ratio = r["mean"] / oracle if oracle_ok else None
        table.append([r["n"], r["mean"], r["se"], oracle, ratio])
    bundle.add_table("galerkin", ["n", "mean_sq_error", "standard_error", "tail_oracle", "ratio"], table)
    means = [r["mean"] for r in rows]
    bundle.verdicts["errors_monotone_decreasing"] = all(
        b < a or a == b == 0.0 for a, b in zip(means, means[1:]))
    if oracle_ok:
        bundle.verdicts["within_factor_1.5_of_oracle"] = all(
            1.0 / GALERKIN_FACTOR <= row[4] <= GALERKIN_FACTOR for row in table)


def quadratic_ito_check(basis, steps=QUADRATIC_STEPS, horizon=1.0):
    """Deterministic decay ``x_1(t) = e^{-t} x_1(0)`` with ``v = x_1^2``; max residual."""
    n = basis.dimension
    x0 = basis.unit(1)
    cfg = SimulationConfig(horizon, steps, n, x0, basis=basis)
    cs = CoefficientSet(n)
    marks = MarkSpace.empty(n)
    lam = IntensityFunction.constant(np.zeros(0), 0)
    noise = sample_noise(n, cfg.grid, marks, lam, RngStream(0, 0))
    path = simulate_path(cfg, cs, marks, lam, noise)
    Q = np.zeros((n, n))
    Q[0, 0] = 1.0
    res = ito_residual(path, QuadraticPotential(basis, Q), cs, marks, lam)
    exact = float(np.max(np.abs(path.states[:, 0] - np.exp(-path.times))))
    return float(np.max(np.abs(res.values))), exact


def _ito(scenario, bundle, workers):
    spec = scenario.spec
    steps = _ladder_steps(spec)
    coarse = scenario.config(steps=steps[0])
    if scenario.potential is not None:
        v = scenario.potential
    else:
        v = QuadraticPotential(scenario.basis, 0.5 * np.eye(scenario.basis.dimension))

    def run(paths):
        levels = _ladder_noises(scenario, coarse, paths)
        out = {}
        for i, (K, noises) in enumerate(zip(steps, levels)):
            batch = simulate_batch(scenario.config(steps=K), scenario.coefficients, scenario.marks,
                                   scenario.intensity, noises)
            out[f"level{i}"] = ito_residual(batch, v, scenario.coefficients, scenario.marks,
                                            scenario.intensity, scenario.pairing).max_abs
        return out

    parts = map_chunks(run, _ladder_paths(spec), spec.chunk_size, workers)
    rms = [_rms(np.concatenate([p[f"level{i}"] for p in parts])) for i in range(len(steps))]
    bundle.add_table("ito_residual", ["steps", "dt", "rms_max_residual"],
                     [[K, spec.horizon / K, r] for K, r in zip(steps, rms)])
    ratios = _log2_ratios(rms)
    bundle.add_table("halving_ratios", ["from_steps", "to_steps", "log2_ratio"],
                     [[a, b, float(r)] for a, b, r in zip(steps, steps[1:], ratios)])
    quad, exact = quadratic_ito_check(scenario.basis, horizon=spec.horizon)
    bundle.add_table("quadratic_deterministic", ["steps", "max_residual", "max_state_error"],
                     [[QUADRATIC_STEPS, quad, exact]])
    bundle.verdicts["rms_strictly_decreasing"] = bool(np.all(np.diff(rms) < 0))
    bundle.verdicts["mean_log2_ratio_ge_0.4"] = bool(np.mean(ratios) >= RATIO_MIN)
    bundle.verdicts["quadratic_residual_le_1e-3"] = quad <= QUADRATIC_TOL


def picard_study(scenario, path_index=0):
    """Exponential Euler vs Picard on one fixed noise, refined ``halvings`` times.

    Returns rows ``(steps, dt, sup_distance, C, distances)``.
    """
    spec = scenario.spec
    steps = _ladder_steps(spec)
    noise = sample_noise(scenario.basis.dimension, scenario.config(steps=steps[0]).grid,
                         scenario.marks, scenario.intensity, RngStream(spec.seed, path_index))
    rows = []
    for K in steps:
        cfg = scenario.config(steps=K)
        ee = simulate_path(cfg, scenario.coefficients, scenario.marks, scenario.intensity, noise)
        pc = picard_reference_path(cfg, scenario.coefficients, scenario.marks, scenario.intensity,
                                   noise, iterations=spec.picard_iterations)
        d = float(max(np.max(np.linalg.norm(ee.states - pc.states, axis=1)),
                      np.max(np.linalg.norm(ee.left_states - pc.left_states, axis=1))))
        rows.append((K, spec.horizon / K, d, d * K / spec.horizon, pc.diagnostics["distances"]))
        if K != steps[-1]:
            noise = refine_noise(noise)
    return rows


def contracts(distances, floor=1e-12):
    """Monotone decrease of successive Picard distances, down to a round-off floor."""
    return all(b <= a or b <= floor for a, b in zip(distances, distances[1:]))


def _picard(scenario, bundle):
    rows = picard_study(scenario)
    C = np.array([r[3] for r in rows])
    bundle.add_table("picard", ["steps", "dt", "sup_distance", "C", "last_iterate_distance"],
                     [[r[0], r[1], r[2], r[3], r[4][-1]] for r in rows])
    bundle.add_table("picard_iterates", ["steps", "iteration", "distance"],
                     [[r[0], j + 1, d] for r in rows for j, d in enumerate(r[4])])
    bundle.verdicts["C_stable_within_50pct"] = bool(np.all(np.abs(C / C[0] - 1.0) <= PICARD_BAND))
    bundle.verdicts["picard_contracts_monotonically"] = all(contracts(r[4]) for r in rows)


def _compensator(scenario, bundle, workers):
    spec = scenario.spec
    cfg = scenario.config()
    m = scenario.marks.n_atoms

    def fn(batch):
        return {"log": _log_density(scenario, batch).log_density,
                "counts": batch.accepted_counts(m)}

    vals = _ensemble(scenario, cfg, fn, workers)
    rep = compensator_change_check(vals["log"], vals["counts"], scenario.marks, spec.horizon)
    bundle.add_table("compensator", ["atom", "weighted_count", "target", "standard_error", "passed"],
                     [[a.atom, a.estimate, a.target, a.standard_error, a.passed] for a in rep.atoms])
    bundle.verdicts["weighted_counts_within_3se"] = rep.passed


def _pure_jump(scenario, bundle, workers):
    if not scenario.pure_jump:
        raise ScenarioError("PURE_JUMP needs a scenario without diffusion")
    _require_potential(scenario)
    cfg = scenario.config(steps=scenario.spec.coarse_steps)
    noises = ensemble_noises(cfg, scenario.marks, scenario.intensity, scenario.spec.seed, range(16))
    batch = simulate_batch(cfg, scenario.coefficients, scenario.marks, scenario.intensity, noises)
    full = accumulate_girsanov_log(batch, scenario.coefficients, scenario.intensity, scenario.marks)
    bar = pure_jump_girsanov_log(batch, scenario.intensity, scenario.marks)
    bundle.verdicts["brownian_terms_identically_zero"] = bool(
        not np.any(bar.wiener_term) and not np.any(bar.quad_term))
    bundle.verdicts["general_and_pure_jump_logs_agree"] = bool(np.array_equal(full.total, bar.total))
    _martingale(scenario, bundle, workers, "pj_")
    _path_independence(scenario, bundle, workers, "pj_")
    _ide(scenario, bundle, "pj_")


def run_experiment(scenario, experiment, workers=1):
    """Run ``experiment`` on ``scenario`` and return its ``ReportBundle``."""
    experiment = Experiment.parse(experiment)
    bundle = _bundle(scenario, experiment)
    if experiment is Experiment.MARTINGALE:
        _martingale(scenario, bundle, workers)
    elif experiment is Experiment.PATH_INDEPENDENCE:
        _path_independence(scenario, bundle, workers)
    elif experiment is Experiment.IDE_RESIDUAL:
        _ide(scenario, bundle)
    elif experiment is Experiment.GALERKIN:
        _galerkin(scenario, bundle, workers)
    elif experiment is Experiment.ITO:
        _ito(scenario, bundle, workers)
    elif experiment is Experiment.PICARD_XCHECK:
        _picard(scenario, bundle)
    elif experiment is Experiment.COMPENSATOR:
        _compensator(scenario, bundle, workers)
    else:
        _pure_jump(scenario, bundle, workers)
    return bundle


def simulate_summary(scenario, workers=1):
    """Ensemble means of the terminal state and of the Girsanov density."""
    spec = scenario.spec
    cfg = scenario.config()

    def fn(batch):
        return {"final": batch.final_states, "counts": batch.accepted_counts(scenario.marks.n_atoms),
                "log": _log_density(scenario, batch).log_density}

    vals = _ensemble(scenario, cfg, fn, workers)
    bundle = ReportBundle("SIMULATE", spec.echo(),
                          seed_ledger={"master_seed": spec.seed, "paths": spec.paths,
                                       "chunk_size": spec.chunk_size})
    rows = []
    for j in range(cfg.n_modes):
        m, var, se = fsum_stats(vals["final"][:, j])
        rows.append([j + 1, m, var, se])
    bundle.add_table("terminal_state", ["mode", "mean", "variance", "standard_error"], rows)
    rows = []
    for i in range(scenario.marks.n_atoms):
        m, _, se = fsum_stats(vals["counts"][:, i])
        rows.append([i, m, se])
    bundle.add_table("accepted_counts", ["atom", "mean", "standard_error"], rows)
    m, _, se = fsum_stats(np.exp(vals["log"]))
    bundle.add_table("density", ["mean", "standard_error"], [[m, se]])
    return bundle

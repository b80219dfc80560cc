import math

import numpy as np
import pytest

from spdegirsanov.coefficients import CoefficientSet
from spdegirsanov.errors import GridError
from spdegirsanov.experiments import quadratic_ito_check
from spdegirsanov.girsanov import (accumulate_girsanov_log, compensator_change_check, ide_residual,
                                   ito_residual, martingale_check, path_independence_residual,
                                   pure_jump_girsanov_log, pure_jump_ide_residual)
from spdegirsanov.integrator import SimulationConfig, ensemble_noises, simulate_batch, simulate_path
from spdegirsanov.noise import IntensityFunction, MarkSpace, RngStream, sample_noise
from spdegirsanov.potentials import ConstantPotential, ShiftedPotential
from spdegirsanov.scenarios import build_scenario, bundled_config, load_config
from spdegirsanov.spectral import Pairing, SpectralBasis

N = 2
B = SpectralBasis.dirichlet(N)
G = np.array([[-0.7, 0.2]])
ONE_ATOM = MarkSpace([2.0], G)
HALF = IntensityFunction.constant([0.5])
ONE = IntensityFunction.constant([1.0])


@pytest.fixture(scope="module")
def closed_form():
    return build_scenario(load_config(bundled_config("closed_form")))


@pytest.fixture(scope="module")
def pure_jump():
    return build_scenario(load_config(bundled_config("pure_jump")))


def run(cs, marks, lam, steps=50, seed=1, path=0, x0=(0.3, -0.2)):
    cfg = SimulationConfig(1.0, steps, N, list(x0))
    nz = sample_noise(N, cfg.grid, marks, lam, RngStream(seed, path))
    return simulate_path(cfg, cs, marks, lam, nz)


def test_identity_density():
    cs = CoefficientSet(N, diffusion=np.array([1.0, 2.0]), jump=G)
    p = run(cs, ONE_ATOM, ONE)
    g = accumulate_girsanov_log(p, cs, ONE, ONE_ATOM)
    assert not np.any(g.total)
    assert g.density == 1.0


def test_jump_only_constants():
    cs = CoefficientSet(N, diffusion=np.array([1.0, 2.0]), jump=G)
    for path in range(5):
        p = run(cs, ONE_ATOM, HALF, path=path)
        n_events = len(p.jump_log)
        g = accumulate_girsanov_log(p, cs, HALF, ONE_ATOM)
        assert g.comp_term[-1] == pytest.approx(-1.0, abs=1e-14)
        assert g.jump_term[-1] == pytest.approx(n_events * math.log(2.0), abs=1e-14)
        assert not np.any(g.wiener_term) and not np.any(g.quad_term)


def test_pure_jump_constants():
    cs = CoefficientSet(N, jump=G)
    seen_empty = False
    for path in range(12):
        p = run(cs, ONE_ATOM, HALF, path=path)
        g = pure_jump_girsanov_log(p, HALF, ONE_ATOM)
        assert g.comp_term[-1] == pytest.approx(-1.0, abs=1e-14)
        assert g.jump_term[-1] == pytest.approx(len(p.jump_log) * math.log(2.0), abs=1e-14)
        if not p.jump_log:
            seen_empty = True
            assert g.total[-1] == pytest.approx(-1.0, abs=1e-14)
        assert np.array_equal(g.total, accumulate_girsanov_log(p, cs, HALF, ONE_ATOM).total)
    assert seen_empty
    g = pure_jump_girsanov_log(run(cs, ONE_ATOM, ONE), ONE, ONE_ATOM)
    assert not np.any(g.total)


def test_pure_jump_rejects_diffusion_path():
    cs = CoefficientSet(N, diffusion=np.ones(N))
    with pytest.raises(ValueError):
        pure_jump_girsanov_log(run(cs, MarkSpace.empty(N), IntensityFunction.constant(np.zeros(0), 0)),
                               HALF, ONE_ATOM)


def test_quadratic_term_constant_gamma():
    a = 1.3
    cs = CoefficientSet(N, drift=np.array([a, 0.0]), diffusion=np.ones(N))
    g = accumulate_girsanov_log(run(cs, MarkSpace.empty(N), IntensityFunction.constant(np.zeros(0), 0)),
                                cs, IntensityFunction.constant(np.zeros(0), 0), MarkSpace.empty(N))
    assert g.quad_term[-1] == pytest.approx(-0.5 * a * a, rel=1e-14)


def test_wiener_term_is_minus_gamma_dot_w():
    a = 1.3
    cs = CoefficientSet(N, drift=np.array([a, 0.0]), diffusion=np.array([2.0, 1.0]))
    empty = MarkSpace.empty(N)
    none = IntensityFunction.constant(np.zeros(0), 0)
    cfg = SimulationConfig(1.0, 50, N, [0.0, 0.0])
    nz = sample_noise(N, cfg.grid, empty, none, RngStream(4))
    g = accumulate_girsanov_log(simulate_path(cfg, cs, empty, none, nz), cs, none, empty)
    assert g.wiener_term[-1] == pytest.approx(-0.65 * nz.brownian_values[-1, 0], abs=1e-13)
    htilde = accumulate_girsanov_log(simulate_path(cfg, cs, empty, none, nz), cs, none, empty,
                                     Pairing.HTILDE)
    assert htilde.wiener_term[-1] == pytest.approx(0.5 * g.wiener_term[-1], abs=1e-13)
    assert np.array_equal(htilde.quad_term, g.quad_term)


def test_decomposition_exact(closed_form):
    sc = closed_form
    cfg = sc.config(steps=64)
    noises = ensemble_noises(cfg, sc.marks, sc.intensity, 3, range(8))
    batch = simulate_batch(cfg, sc.coefficients, sc.marks, sc.intensity, noises)
    g = accumulate_girsanov_log(batch, sc.coefficients, sc.intensity, sc.marks)
    assert np.array_equal(g.total, g.wiener_term + g.quad_term + g.jump_term + g.comp_term)
    assert g.total.shape == batch.times.shape
    assert not np.any(g.total[:, 0])
    one = accumulate_girsanov_log(batch.path(2), sc.coefficients, sc.intensity, sc.marks)
    np.testing.assert_allclose(one.on_grid(), g.on_grid()[2], rtol=0, atol=1e-13)


def test_brownian_only_martingale():
    cs = CoefficientSet(1, drift=np.array([1.0]), diffusion=np.ones(1))
    empty = MarkSpace.empty(1)
    none = IntensityFunction.constant(np.zeros(0), 0)
    cfg = SimulationConfig(1.0, 4, 1, [0.0])
    noises = ensemble_noises(cfg, empty, none, 8, range(100_000))
    batch = simulate_batch(cfg, cs, empty, none, noises)
    logs = accumulate_girsanov_log(batch, cs, none, empty).log_density
    w_t = np.array([nz.brownian_values[-1, 0] for nz in noises])
    np.testing.assert_allclose(logs, -w_t - 0.5, atol=1e-13)
    rep = martingale_check(logs)
    assert rep.passed and rep.n_paths == 100_000


def test_martingale_check_trivial():
    rep = martingale_check(np.zeros(1000))
    assert rep.mean_density == 1.0 and rep.density_se == 0.0 and rep.passed
    assert not martingale_check(np.full(1000, 0.1)).passed
    with pytest.raises(ValueError):
        martingale_check(np.zeros(999))


def test_compensator_check_trivial():
    marks = MarkSpace([2.0, 1e-9], np.zeros((2, N)))
    counts = np.random.default_rng(0).poisson([2.0, 1e-9], size=(10_000, 2))
    rep = compensator_change_check(np.zeros(10_000), counts, marks, 1.0)
    assert rep.atoms[0].passed and rep.atoms[0].target == 2.0
    assert rep.atoms[1].estimate == 0.0
    d = rep.as_dict()
    assert d["atoms"][0]["atom"] == 0 and d["n_paths"] == 10_000
    with pytest.raises(ValueError):
        compensator_change_check(np.zeros(10), counts[:10], marks, 1.0)


def test_compensator_weighting_jump_only():
    sc = build_scenario(load_config(bundled_config("jump_only")))
    cfg = sc.config()
    noises = ensemble_noises(cfg, sc.marks, sc.intensity, 21, range(10_000))
    batch = simulate_batch(cfg, sc.coefficients, sc.marks, sc.intensity, noises)
    logs = pure_jump_girsanov_log(batch, sc.intensity, sc.marks).log_density
    counts = batch.accepted_counts(1)
    rep = compensator_change_check(logs, counts, sc.marks, 1.0)
    assert rep.passed
    # unweighted counts sit at lambda nu T = 1, far from nu T = 2
    assert abs(counts.mean() - 1.0) < 0.05


def test_path_independence_trivial():
    cs = CoefficientSet(N, diffusion=np.ones(N), jump=G)
    p = run(cs, ONE_ATOM, ONE)
    r = path_independence_residual(p, accumulate_girsanov_log(p, cs, ONE, ONE_ATOM),
                                   ConstantPotential(B, 2.0))
    assert not np.any(r.values)
    other = run(cs, ONE_ATOM, ONE, steps=20)
    with pytest.raises(GridError):
        path_independence_residual(other, accumulate_girsanov_log(p, cs, ONE, ONE_ATOM),
                                   ConstantPotential(B))


def test_path_independence_small(closed_form):
    sc = closed_form
    cfg = sc.config(steps=256)
    noises = ensemble_noises(cfg, sc.marks, sc.intensity, 5, range(32))
    batch = simulate_batch(cfg, sc.coefficients, sc.marks, sc.intensity, noises)
    r = path_independence_residual(batch, accumulate_girsanov_log(batch, sc.coefficients,
                                                                  sc.intensity, sc.marks), sc.potential)
    assert not np.any(r.values[:, 0])
    assert np.sqrt(np.mean(r.max_abs ** 2)) < 0.05
    assert r.on_grid().shape == (32, 257)


def test_ide_trivial_and_shift(closed_form):
    cs = CoefficientSet(N, diffusion=np.ones(N))
    x = np.random.default_rng(0).normal(size=(5, N))
    assert not np.any(ide_residual(ConstantPotential(B, 1.0), cs, MarkSpace.empty(N), 0.3, x))
    assert not np.any(pure_jump_ide_residual(ConstantPotential(B), CoefficientSet(N), MarkSpace.empty(N), 0.3, x))
    sc = closed_form
    rng = np.random.default_rng(1)
    t = rng.uniform(0, 1, 100)
    xs = rng.normal(size=(100, 8))
    res = ide_residual(sc.potential, sc.coefficients, sc.marks, t, xs)
    assert np.max(np.abs(res)) <= 1e-8
    shifted = ide_residual(ShiftedPotential(sc.potential, 0.01), sc.coefficients, sc.marks, t, xs)
    assert np.max(np.abs(shifted - res - 0.01)) <= 1e-8
    # the weighted pairing halves <f, grad v> for k = 1, so the equation no longer balances
    assert np.min(np.abs(ide_residual(sc.potential, sc.coefficients, sc.marks, t, xs, "htilde"))) > 1e-3


def test_pure_jump_ide_drift_shift(pure_jump):
    sc = pure_jump
    rng = np.random.default_rng(2)
    t = rng.uniform(0, 1, 100)
    xs = rng.normal(size=(100, 8))
    res = pure_jump_ide_residual(sc.potential, sc.coefficients, sc.marks, t, xs)
    assert np.max(np.abs(res)) <= 1e-8
    delta = 0.1
    moved = sc.perturbed(delta)
    shift = pure_jump_ide_residual(sc.potential, moved.coefficients, sc.marks, t, xs) - res
    np.testing.assert_allclose(shift, delta * sc.potential.alpha(t), rtol=0, atol=1e-13)


def test_ito_constant_potential_zero(closed_form):
    sc = closed_form
    p = simulate_path(sc.config(steps=64), sc.coefficients, sc.marks, sc.intensity,
                      sample_noise(8, sc.config(steps=64).grid, sc.marks, sc.intensity, RngStream(1)))
    r = ito_residual(p, ConstantPotential(sc.basis, 4.0), sc.coefficients, sc.marks, sc.intensity)
    assert not np.any(r.values)
    r = ito_residual(p, sc.potential, sc.coefficients, sc.marks, sc.intensity)
    assert r.values[0] == 0.0 and r.max_abs < 0.1


def test_ito_quadratic_deterministic():
    res, state_err = quadratic_ito_check(SpectralBasis.dirichlet(4))
    assert res <= 1e-3
    assert state_err < 1e-12

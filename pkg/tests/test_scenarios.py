import math

import numpy as np
import pytest

from spdegirsanov.errors import ConfigError, IntensityRangeError, ScenarioError
from spdegirsanov.experiments import Experiment, run_experiment
from spdegirsanov.scenarios import (CONFIG_DIR, KINDS, ScenarioSpec, build_closed_form_scenario,
                                    build_scenario, bundled_config, load_config, parse_config)


def closed(**kw):
    return ScenarioSpec(**{"kind": "closed_form", "dimension": 8, **kw})


def test_closed_form_intensity_values():
    sc = build_closed_form_scenario(closed())
    r0, rT = sc.intensity.rates(np.array([0.0, 1.0]))[:, 0]
    assert r0 == pytest.approx(math.exp(-0.35), rel=1e-14)
    assert rT == pytest.approx(math.exp(-0.7 * 0.5 * math.e), rel=1e-14)
    assert round(r0, 4) == 0.7047 and round(rT, 4) == 0.3862
    assert sc.potential.alpha(1.0) == pytest.approx(1.3591, abs=1e-4)
    assert sc.checks["ide_max"] <= 1e-8 and sc.checks["drift_error"] <= 1e-12
    np.testing.assert_allclose(sc.coefficients.b(0.0, np.zeros(8)), 0.5 * np.eye(8)[0])


def test_degenerate_slope():
    sc = build_closed_form_scenario(closed(alpha0=0.0))
    assert sc.degenerate and sc.intensity.degenerate
    assert not np.any(sc.coefficients.b(0.5, np.ones(8)))
    assert np.all(sc.intensity.rates(np.linspace(0, 1, 7)) == 1.0)


@pytest.mark.parametrize("kw, err", [
    (dict(projections=(0.1,)), ScenarioError),
    (dict(alpha0=-0.1), ScenarioError),
    (dict(k=3), ScenarioError),
    (dict(k=9), ConfigError),
    (dict(alpha0=1e4, horizon=4.0, max_growth=10.0), IntensityRangeError),
    (dict(sigma="none"), ScenarioError),
])
def test_closed_form_rejections(kw, err):
    with pytest.raises(err):
        build_closed_form_scenario(closed(**kw))


def test_pure_jump_kind():
    sc = build_scenario(ScenarioSpec(kind="pure_jump", drift=(0.3,) + (0.0,) * 7))
    assert sc.pure_jump and not sc.coefficients.has_diffusion
    assert sc.checks["ide_max"] <= 1e-8


@pytest.mark.parametrize("kw", [
    dict(kind="nope"), dict(basis_rule="neumann"), dict(dimension=0), dict(pairing="l2"),
    dict(steps=0), dict(seed=-1), dict(seed=2 ** 64),
])
def test_spec_validation(kw):
    with pytest.raises(ConfigError):
        ScenarioSpec(**kw)


def test_other_kinds():
    jo = build_scenario(ScenarioSpec(kind="jump_only", dimension=1, projections=(-0.7,),
                                     intensity=(0.5,), sigma="none"))
    assert jo.pure_jump and jo.intensity.rates(0.3)[0] == 0.5
    with pytest.raises(ConfigError):
        build_scenario(ScenarioSpec(kind="jump_only", dimension=1))
    heat = build_scenario(ScenarioSpec(kind="heat", dimension=16, projections=None))
    assert heat.marks.n_atoms == 0 and not heat.coefficients.has_drift
    nl = build_scenario(ScenarioSpec(kind="nonlinear", dimension=4, sigma="0.2",
                                     drift=(2.0, 0, 0, 0), drift_sine=0.5, intensity=(0.5,)))
    x = np.array([0.3, 0.0, 0.0, 0.0])
    assert nl.coefficients.b(0.0, x)[0] == pytest.approx(2.0 - 0.5 * math.sin(0.3))
    assert nl.coefficients.sigma_apply(0.0, x, np.ones(4))[0] == pytest.approx(0.2 * (1 + 0.25 * math.cos(0.3)))
    with pytest.raises(ScenarioError):
        run_experiment(nl, Experiment.IDE_RESIDUAL)


def test_parse_config_roundtrip():
    text = """
    [basis]
    dimension = 4   # modes
    [marks]
    masses = 1.0, 2.0
    payloads = -0.5 0 0 0 | 0 -0.25 0 0
    [coefficients]
    kind = jump_only
    sigma = none
    intensity = 0.5 0.25
    [run]
    dims = 1 2
    steps = 16  ; short run
    initial_state = 1 2 3 4
    """
    spec = parse_config("\n".join(line.strip() for line in text.splitlines()))
    assert spec.dimension == 4 and spec.masses == (1.0, 2.0) and spec.steps == 16
    assert spec.payloads == ((-0.5, 0.0, 0.0, 0.0), (0.0, -0.25, 0.0, 0.0))
    assert spec.dims == (1, 2) and spec.sigma == "none"
    sc = build_scenario(spec)
    assert sc.marks.n_atoms == 2
    np.testing.assert_array_equal(sc.config().initial_state, [1, 2, 3, 4])
    echo = spec.echo()
    assert echo["masses"] == [1.0, 2.0] and echo["kind"] == "jump_only"
    assert spec.with_overrides(seed=None, paths=7).paths == 7


@pytest.mark.parametrize("text", [
    "[oops]\nx = 1\n",
    "[run]\nsteps = many\n",
    "[run]\nunknown = 1\n",
    "not an ini",
    "[basis]\ndimension = 4\n[run]\ninitial_state = 1 2\n",
])
def test_parse_config_errors(text):
    with pytest.raises(ConfigError):
        build_scenario(parse_config(text)).config()


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")
    with pytest.raises(ConfigError):
        bundled_config("missing")


@pytest.mark.parametrize("name", sorted(p.stem for p in CONFIG_DIR.glob("*.ini")))
def test_bundled_configs_build(name):
    spec = load_config(bundled_config(name))
    assert spec.kind in KINDS
    sc = build_scenario(spec)
    assert sc.config().dimension == spec.dimension

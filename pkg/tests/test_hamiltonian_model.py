import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artifact.hamiltonian_model import (INFINITE_COST, HamiltonianSpec, config_from_dict, default_config, eval_G,
                                        eval_lagrangian, load_config, measure_c0, region_index,
                                        validate_assumptions)

coord = st.floats(-1.3, 1.3, allow_nan=False)


def test_quadratic_on_ball(spec):
    assert spec.H([0.0, 0.3]) == pytest.approx(0.09, abs=1e-15)
    assert spec.H([0.0, 0.0]) == 0.0
    np.testing.assert_allclose(spec.grad([0.1, 0.2]), [-0.2, 0.4], atol=1e-15)
    np.testing.assert_allclose(spec.drift([0.1, 0.2]), [0.4, 0.2], atol=1e-15)


def test_well_bottom(spec):
    s = spec.s_star
    # root of the outer branch of W'
    assert -2 * s + 4 * spec.blend_c * (s - spec.kappa) ** 3 == pytest.approx(0.0, abs=1e-12)
    assert spec.H([s, 0.0]) == pytest.approx(spec.h_min, abs=1e-15)
    assert spec.h_min < 0
    for x in ([s, 0.0], [-s, 0.0], [0.0, 0.0]):
        np.testing.assert_allclose(spec.grad(x), 0.0, atol=1e-12)
        np.testing.assert_allclose(spec.drift(x), 0.0, atol=1e-12)


@given(coord, coord)
def test_drift_orthogonal_to_gradient(x, y):
    spec = HamiltonianSpec()
    p = np.array([x, y])
    assert abs(spec.drift(p) @ spec.grad(p)) <= 1e-12


@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_gradient_norm_on_ball(x, y):
    spec = HamiltonianSpec()
    if math.hypot(x, y) > spec.kappa:
        return
    assert np.linalg.norm(spec.grad([x, y])) == pytest.approx(2 * math.hypot(x, y), abs=1e-14)


def test_eval_G(spec, config):
    zero = default_config(spec, f_params=config.f_params.__class__(f0=0.0))
    assert eval_G(zero, np.array([0.3, 0.1]), np.array([3.0, 4.0])) == pytest.approx(5.0)
    x = np.array([-0.5, 0.3])
    assert eval_G(config, x, np.zeros(2)) == pytest.approx(-config.f(x))
    rng = np.random.default_rng(1)
    xs = rng.uniform(-1, 1, (500, 2))
    ps = rng.normal(size=(500, 2)) * 5
    assert np.all(eval_G(config, xs, ps) >= config.nu * np.linalg.norm(ps, axis=1) - config.M_bound - 1e-12)


@settings(max_examples=50)
@given(st.lists(st.floats(-10, 10), min_size=4, max_size=4), coord, coord)
def test_G_midpoint_convex(p, x, y):
    spec = HamiltonianSpec()
    cfg = default_config(spec)
    X = np.array([x, y])
    a, b = np.array(p[:2]), np.array(p[2:])
    mid = eval_G(cfg, X, 0.5 * (a + b))
    assert mid <= 0.5 * (eval_G(cfg, X, a) + eval_G(cfg, X, b)) + 1e-12


def test_lagrangian(spec, config):
    zero = default_config(spec, f_params=config.f_params.__class__(f0=0.0))
    assert eval_lagrangian(zero, [0.1, 0.1], [0.6, 0.0]) == 0.0
    assert eval_lagrangian(config, [0.1, 0.1], [1.5, 0.0]) is INFINITE_COST
    with pytest.raises(TypeError):
        float(INFINITE_COST)
    x = np.array([-0.4, 0.25])
    assert eval_lagrangian(config, x, [0.0, 0.0]) == pytest.approx(-float(eval_G(config, x, np.zeros(2))))


def test_default_model_validates(spec, config):
    rep = validate_assumptions(spec, config)
    assert rep.passed, rep.to_text()
    assert rep.c0 > 0


def test_no_blend_fails_coercivity():
    spec = HamiltonianSpec(blend_c=0.0)
    cfg = default_config(HamiltonianSpec(), h1=-0.3, h3=-0.3)
    rep = validate_assumptions(spec, cfg)
    assert not rep.passed
    assert [c.name for c in rep.failures()][0] == "coercivity"


def test_ball_outside_domain_fails(spec):
    cfg = default_config(spec, h2=0.2)  # kappa^2 = 0.25 > h2
    rep = validate_assumptions(spec, cfg)
    assert "closed ball inside domain" in [c.name for c in rep.failures()]


def test_c0_lower_bound_holds(spec, config):
    c0, where = measure_c0(spec, config)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1.3, 1.3, (20000, 2))
    inside = region_index(spec, config, pts) > 0
    pts = pts[inside]
    g = np.linalg.norm(spec.grad(pts), axis=1)
    assert np.all(g >= c0 * np.sqrt(np.abs(spec.H(pts))) * (1 - 1e-6))


def test_region_index(spec, config):
    idx = region_index(spec, config, np.array([[-0.5, 0.0], [0.5, 0.0], [0.0, 0.5], [0.0, 2.0]]))
    assert idx.tolist() == [1, 3, 2, 0]


def test_config_roundtrip(tmp_path, spec):
    path = tmp_path / "m.toml"
    path.write_text('[model]\nkappa = 0.5\n[problem]\nlambda = 2.0\nboundary = [0.0, -1.0, 0.0]\n'
                    '[cost]\nf0 = 0.0\n[experiment]\ngrid = 51\n')
    s, cfg, raw = load_config(path)
    assert s == spec
    assert cfg.lam == 2.0 and cfg.boundary == (0.0, -1.0, 0.0) and cfg.f_params.is_zero
    assert cfg.h1 == pytest.approx(0.6 * spec.h_min)
    assert raw["experiment"]["grid"] == 51
    assert config_from_dict({})[1] == default_config(spec)

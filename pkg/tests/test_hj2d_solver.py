import json
import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from artifact.hamiltonian_model import CostParams, default_config
from artifact.hj2d_solver import (BOUNDARY, EXTERIOR, INTERIOR, EpsilonTooSmall, NoConvergence, append_jsonl,
                                  boundary_error, build_mask, compare_to_graph, loop_trace_values, make_grid, solve,
                                  step_operator, summary_record, sup_bound, write_nodal_csv)
from artifact.level_geometry import seed_point, trace_loop
from oracles import policy_enumeration


@pytest.fixture(scope="module")
def coarse(spec, config):
    grid = make_grid(spec, config, 101)
    return grid, build_mask(spec, grid, config)


def nearest(grid, p):
    return int(round((p[0] - grid.bbox[0]) / grid.dx)), int(round((p[1] - grid.bbox[2]) / grid.dy))


def test_grid_contains_domain(spec, config):
    grid = make_grid(spec, config, 51)
    x0, x1, y0, y1 = grid.bbox
    assert x0 < -spec.level_extent(config.h2) and x1 > spec.level_extent(config.h2)
    with pytest.raises(ValueError):
        make_grid(spec, config, 51, margin=-0.05)


def test_mask_examples(spec, config, coarse):
    grid, mask = coarse
    i, j = nearest(grid, (0.0, math.sqrt(config.h2 / 2)))
    assert mask.kind[i, j] == INTERIOR and mask.component[i, j] == 2
    pts = grid.points()
    assert np.all(mask.kind[mask.H > config.h2 + 1e-12] != INTERIOR)
    far = mask.H > config.h2 + 0.3
    assert np.all(mask.kind[far] == EXTERIOR)
    # walking out along the x1-axis from the left well, the first node past h1 is on the boundary band
    p = seed_point(spec, 1, config.h1)
    i, j = nearest(grid, p)
    while mask.H[i, j] > config.h1:
        i += 1
    assert mask.kind[i, j] == BOUNDARY and mask.component[i, j] == 1
    # wells are told apart by the side of the saddle
    assert np.all(pts[..., 0][(mask.component == 1) & (mask.kind == INTERIOR)] < 0)
    assert np.all(pts[..., 0][(mask.component == 3) & (mask.kind == INTERIOR)] > 0)
    assert mask.component[nearest(grid, (-spec.kappa, 0.0))] == 1
    assert mask.component[nearest(grid, (spec.kappa, 0.0))] == 3


def test_zero_cost_is_exact(spec, zero_config, coarse):
    grid, _ = coarse
    mask = build_mask(spec, grid, zero_config)
    for eps in (0.4, 0.05):
        sol = solve(spec, zero_config, grid, mask, eps)
        assert sol.iterations <= 2
        assert np.abs(sol.u).max() == 0.0
    loop = trace_loop(spec, 2, 0.3)
    assert loop_trace_values(sol, loop) == (0.0, 0.0)


def test_constant_cost_bracket(spec, coarse):
    grid, mask = coarse
    c = 0.7
    cfg = default_config(spec, f_params=CostParams(f0=c, amplitude=0.0))
    sol = solve(spec, cfg, grid, mask, 0.2)
    assert sol.u.min() >= 0.0
    assert sol.u.max() <= c / cfg.lam


def test_policy_enumeration_oracle(spec, config, coarse):
    grid, mask = coarse
    sol = solve(spec, config, grid, mask, 1.0)
    probes = np.array([[-0.55, 0.35], [0.55, -0.3], [0.2, 0.45], [-0.45, 0.3], [0.9, 0.75]])
    ref = np.array([policy_enumeration(spec, config, p, 1.0, depth=3, seg=0.1) for p in probes])
    assert np.abs(sol.sample(probes) - ref).max() <= 3e-2


@settings(max_examples=20, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 1.0))
def test_update_operator_is_monotone(spec, config, seed, eps):
    grid = make_grid(spec, config, 41)
    mask = build_mask(spec, grid, config)
    op = step_operator(spec, config, grid, mask, eps)
    rng = np.random.default_rng(seed)
    u = np.zeros(grid.nx * grid.ny)
    u[op.nodes] = rng.uniform(-1, 3, op.nodes.size)
    v = u.copy()
    v[op.nodes] += rng.uniform(0, 1, op.nodes.size) * (rng.random(op.nodes.size) < 0.3)
    assert np.all(op.apply(v) >= op.apply(u) - 1e-14)


def test_contraction_and_bounds(spec, config, coarse):
    grid, mask = coarse
    sol = solve(spec, config, grid, mask, 0.2, mode="jacobi", init=np.full(grid.nx * grid.ny, 2.0))
    h = np.array(sol.history)
    rate = math.exp(-config.lam * sol.dt)
    assert np.all(h[1:] <= rate * h[:-1] * (1 + 1e-9) + 1e-15)
    assert max(sol.sup_history) <= sup_bound(config)


def test_boundary_nodes_hold_zero(spec, config, coarse, graph):
    grid, mask = coarse
    sol = solve(spec, config, grid, mask, 0.4)
    assert np.all(sol.u[mask.boundary] == 0.0)
    assert boundary_error(sol, graph) == 0.0
    for b in (1, 2, 3):
        mean, _ = loop_trace_values(sol, trace_loop(spec, b, config.level(b)))
        assert abs(mean - config.boundary[b - 1]) <= 0.05


def test_sweep_modes_agree(spec, config, coarse):
    grid, mask = coarse
    gs = solve(spec, config, grid, mask, 0.2, tol=1e-11)
    ja = solve(spec, config, grid, mask, 0.2, tol=1e-11, mode="jacobi")
    ja2 = solve(spec, config, grid, mask, 0.2, tol=1e-11, mode="jacobi")
    assert np.abs(gs.u - ja.u).max() <= 1e-9
    assert np.array_equal(ja.u, ja2.u)
    assert gs.iterations < ja.iterations


def test_zero_cost_matches_graph(spec, zero_config, zero_tables, coarse):
    from artifact.graph_solver import assemble_solution

    grid, _ = coarse
    mask = build_mask(spec, grid, zero_config)
    sol = solve(spec, zero_config, grid, mask, 0.1)
    errs = compare_to_graph(sol, assemble_solution(zero_tables, (0.0, 0.0, 0.0)))
    assert errs["overall"] <= 1e-9


def test_failures(spec, config, coarse):
    grid, mask = coarse
    with pytest.raises(NoConvergence) as err:
        solve(spec, config, grid, mask, 0.2, max_iter=3)
    assert err.value.final_update > 0
    with pytest.raises(EpsilonTooSmall):
        solve(spec, config, grid, mask, 1e-6, scheme="euler")
    with pytest.raises(ValueError):
        solve(spec, config, grid, mask, 0.2, controls=4)
    with pytest.raises(ValueError):
        solve(spec, config, grid, mask, 0.0)


def test_lax_friedrichs_variant_close(spec, config):
    gaps = []
    for n in (101, 201):
        grid = make_grid(spec, config, n)
        mask = build_mask(spec, grid, config)
        a = solve(spec, config, grid, mask, 0.4)
        b = solve(spec, config, grid, mask, 0.4, scheme="lax_friedrichs")
        gaps.append(np.abs(a.u - b.u).max())
    assert gaps[0] <= 0.1 and gaps[1] < gaps[0]


def test_outputs(tmp_path, spec, config, coarse):
    grid, mask = coarse
    sol = solve(spec, config, grid, mask, 0.4)
    p = write_nodal_csv(sol, tmp_path / "u.csv", "abc")
    lines = p.read_text().splitlines()
    assert lines[0] == "# config_hash=abc" and lines[1] == "x1,x2,H,u"
    assert len(lines) - 2 == int((mask.kind != EXTERIOR).sum())
    rec = summary_record(sol, grid=101)
    append_jsonl(tmp_path / "r.jsonl", rec)
    back = json.loads((tmp_path / "r.jsonl").read_text())
    assert {"epsilon", "iterations", "final_update", "sup_abs_u"} <= set(back)

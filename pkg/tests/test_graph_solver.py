import dataclasses

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from artifact.averaged_hamiltonian import build_table
from artifact.graph_solver import (AnchorInadmissible, InadmissibleData, assemble_solution, check_admissibility,
                                   equicontinuity_violations, junction_value, ratio_bound_violations, read_solution,
                                   residual, residual_profile, slope_bound_violations, solve_max_subsolution,
                                   write_solution)
from artifact.hamiltonian_model import CostParams, default_config

COARSE = 201


def test_zero_cost_zero_data(zero_tables):
    for t in zero_tables:
        e = solve_max_subsolution(t, "outer", 0.0)
        assert np.abs(e.u_values).max() == 0.0
    g = assemble_solution(zero_tables, (0.0, 0.0, 0.0))
    assert g.d0 == 0.0
    assert all(np.abs(g.edges[i].u_values).max() == 0.0 for i in (1, 2, 3))


def test_anchor_monotone(tables):
    t = tables[1]
    hi = solve_max_subsolution(t, "outer", 0.0, COARSE)
    lo = solve_max_subsolution(t, "outer", -0.3, COARSE)
    assert np.all(lo.u_values <= hi.u_values + 1e-12)
    assert lo.outer_value == pytest.approx(-0.3)


def test_unattainable_anchor(tables):
    with pytest.raises(AnchorInadmissible):
        solve_max_subsolution(tables[0], "junction", 100.0, COARSE)
    with pytest.raises(InadmissibleData) as err:
        assemble_solution(tables, (100.0, 0.0, 0.0), COARSE)
    assert err.value.report.failed == [1]


def test_junction_value():
    assert junction_value((0, 0, 0)) == 0
    assert junction_value((1.0, 0.5, 0.7)) == 0.5


def test_default_solution_invariants(graph, tables):
    for t in tables:
        e = graph.edges[t.branch]
        assert e.outer_value == pytest.approx(0.0, abs=1e-12)
        assert e.junction_value == pytest.approx(graph.d0, abs=1e-12)
        assert residual(e, t) <= 1e-8
    assert graph.d0 == pytest.approx(min(graph.rho[i].junction_value for i in (1, 2, 3)))


def test_symmetric_cost_equal_wells(spec):
    cfg = default_config(spec, f_params=CostParams(f0=1.0, amplitude=1.5, center=(0.0, 0.3), radius=0.45))
    tabs = [build_table(spec, cfg, b, h_count=20, q_count=101) for b in (1, 2, 3)]
    g = assemble_solution(tabs, (-0.2, 0.0, -0.2))
    np.testing.assert_allclose(g.edges[1].u_values, g.edges[3].u_values, atol=1e-8)


def test_admissibility_examples(zero_tables, tables):
    assert check_admissibility(zero_tables, 0.0, (0.0, 0.0, 0.0)).admissible
    base = check_admissibility(tables, None, (0.0, 0.0, 0.0))
    rho_min = base.d0
    rep = check_admissibility(tables, rho_min + 1.0, (0.0, 0.0, 0.0))
    assert rep.clauses[2][0] == "fail"
    for a in (0.1, 0.5, 2.0):
        assert check_admissibility(tables, rho_min - a, (-a, -a, -a)).admissible


def test_residual_examples(graph, tables):
    t = tables[0]
    e = graph.edges[1]
    shifted = dataclasses.replace(e, u_values=e.u_values + 1.0)
    prof = residual_profile(shifted, t)
    np.testing.assert_allclose(prof[1:-1], t.lam, atol=1e-6)
    u = e.u_values.copy()
    j = 400
    u[j] += 0.01
    prof = residual_profile(dataclasses.replace(e, u_values=u), t)
    far = np.ones(u.size, bool)
    far[j - 1:j + 2] = False
    far[[0, -1]] = False
    assert np.abs(prof[far]).max() <= 1e-8
    assert np.abs(prof[j]) > 1e-3


def test_initialization_independence(tables):
    for t in tables:
        runs = [solve_max_subsolution(t, "outer", 0.0, 401, init=i).u_values for i in ("above", "below", "trivial")]
        assert np.abs(runs[0] - runs[1]).max() <= 1e-9
        assert np.abs(runs[0] - runs[2]).max() <= 1e-9


boundary = st.floats(-1.0, 0.0, allow_nan=False)


@settings(max_examples=12, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.tuples(boundary, boundary, boundary), st.tuples(*[st.floats(0.0, 0.3)] * 3))
def test_comparison_in_boundary_data(tables, d, bump):
    lo = tuple(d)
    hi = tuple(a + b for a, b in zip(d, bump))
    try:
        u_lo = assemble_solution(tables, lo, COARSE)
        u_hi = assemble_solution(tables, hi, COARSE)
    except InadmissibleData:
        return
    for i in (1, 2, 3):
        assert np.all(u_lo.edges[i].u_values <= u_hi.edges[i].u_values + 1e-9)


def test_grid_convergence_first_order(zero_tables):
    d = (-0.4, -0.5, -0.4)
    ref = assemble_solution(zero_tables, d, 6401)
    errs = []
    for n in (201, 401, 801):
        g = assemble_solution(zero_tables, d, n)
        errs.append(max(np.abs(g.edges[i].u_values - ref.u(i, g.edges[i].h_nodes)).max() for i in (1, 2, 3)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 0.9), orders


def test_a_priori_bounds(graph, tables):
    for t in tables:
        e = graph.edges[t.branch]
        assert slope_bound_violations(e, t) == []
        assert ratio_bound_violations(e, t) == []
        assert equicontinuity_violations(e, t) == []


def test_lax_friedrichs_cross_check(tables):
    t = tables[0]
    for n in (201, 401):
        god = solve_max_subsolution(t, "outer", 0.0, n)
        lf = solve_max_subsolution(t, "outer", 0.0, n, flux="lax_friedrichs")
        gap = np.abs(god.u_values - lf.u_values).max()
        if n == 201:
            first = gap
    assert gap < first


def test_persistence(tmp_path, graph):
    p = write_solution(graph, tmp_path / "g.csv", "h0")
    back = read_solution(p)
    for i in (1, 2, 3):
        np.testing.assert_array_equal(back[i].u_values, graph.edges[i].u_values)

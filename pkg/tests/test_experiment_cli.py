import json
import math
import warnings
from pathlib import Path

import numpy as np
import pytest

from artifact._io import read_csv_rows
from artifact.experiment_cli import (CONVERGENCE_COLUMNS, EXIT_NONCONVERGENCE, EXIT_OK, EXIT_VALIDATION,
                                     Experiment, Run, RunManifest, annulus_transit_check, config_hash, converge,
                                     crossing_time_check, emit_plots, error_nonincreasing, experiment_from_dict,
                                     main, resolve)
from artifact.hamiltonian_model import measure_c0

SMALL = """
[experiment]
epsilons = [0.4, 0.2]
grid = 61
h_count = 12
q_count = 101
edge_nodes = 201
"""


def write_config(directory, extra=""):
    p = Path(directory) / "cfg.toml"
    p.write_text(extra + SMALL)
    return p


@pytest.fixture(scope="module")
def small_runs(tmp_path_factory):
    """The same small sweep run into two separate output roots."""
    base = tmp_path_factory.mktemp("cli")
    cfg = write_config(base)
    roots = [base / "a", base / "b"]
    for root in roots:
        assert main(["converge", "--config", str(cfg), "--out", str(root)]) == EXIT_OK
    assert main(["emit-plots", "--config", str(cfg), "--out", str(roots[0])]) == EXIT_OK
    spec, config, exp = resolve(cfg)
    return cfg, [root / config_hash(spec, config, exp) for root in roots]


def test_config_hash_tracks_every_setting(spec, config):
    base = config_hash(spec, config, Experiment())
    assert base == config_hash(spec, config, Experiment())
    assert len(base) == 12
    assert config_hash(spec, config, Experiment(grid=201)) != base
    moved = config.__class__(**{**config.__dict__, "boundary": (0.0, -0.1, 0.0)})
    assert config_hash(spec, moved, Experiment()) != base


def test_experiment_section_rejects_unknown_keys():
    assert experiment_from_dict({"experiment": {"epsilons": [0.3]}}).epsilons == (0.3,)
    with pytest.raises(ValueError, match="grdi"):
        experiment_from_dict({"experiment": {"grdi": 3}})


def test_error_nonincreasing():
    assert error_nonincreasing([0.2, 0.1, 0.105, 0.05])
    assert not error_nonincreasing([0.2, 0.1, 0.12])


def test_validate_model_exit_codes(tmp_path, capsys):
    assert main(["validate-model", "--out", str(tmp_path)]) == EXIT_OK
    bad = write_config(tmp_path, "[model]\nblend_c = 0.0\n[problem]\nh1 = -0.3\nh3 = -0.3\n")
    assert main(["validate-model", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_VALIDATION
    assert "[FAIL] coercivity" in capsys.readouterr().out


def test_inadmissible_boundary_data_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, "[problem]\nboundary = [100.0, 0.0, 0.0]\n")
    assert main(["solve-graph", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_VALIDATION
    assert "clause 1" in capsys.readouterr().err


def test_iteration_cap_exits_3(tmp_path):
    cfg = write_config(tmp_path)
    argv = ["solve-2d", "--config", str(cfg), "--out", str(tmp_path), "--epsilon", "0.2", "--max-iter", "2"]
    assert main(argv) == EXIT_NONCONVERGENCE


def test_plots_without_sweep_exit_2(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["emit-plots", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_VALIDATION
    assert "convergence.csv" in capsys.readouterr().err


def test_manifest_complete_and_stamped(small_runs):
    _, (run_dir, _) = small_runs
    m = RunManifest.load(run_dir / "manifest.json")
    on_disk = {p.name for p in run_dir.iterdir()} - {"manifest.json"}
    assert set(m.outputs.values()) == on_disk
    assert m.missing(run_dir) == [] and m.unstamped(run_dir) == []
    assert m.epsilons == [0.4, 0.2] and m.grid_sizes == [61]
    assert {"build-gbar", "solve-graph", "solve-2d eps=0.4", "emit-plots"} <= set(m.stage_seconds)
    assert {"error_vs_eps.svg", "period_vs_log.svg", "gbar_profiles.svg", "u_heatmap.svg"} <= on_disk
    records = [json.loads(ln) for ln in (run_dir / "solve2d.jsonl").read_text().splitlines()]
    assert [r["epsilon"] for r in records] == [0.4, 0.2]
    assert all(set(r["errors"]) == {"1", "2", "3", "overall"} for r in records)


def test_sweep_is_reproducible(small_runs):
    _, (a, b) = small_runs
    for name in ("gbar.csv", "graph.csv", "u2d_eps0.4_n61.csv", "u2d_eps0.2_n61.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    # wall-clock seconds are the one column allowed to differ
    ra, rb = read_csv_rows(a / "convergence.csv"), read_csv_rows(b / "convergence.csv")
    keep = [k for k, c in enumerate(CONVERGENCE_COLUMNS) if c != "seconds"]
    assert np.array_equal(ra[:, keep], rb[:, keep])


def test_convergence_rows(small_runs):
    _, (run_dir, _) = small_runs
    rows = read_csv_rows(run_dir / "convergence.csv")
    assert rows.shape == (2, len(CONVERGENCE_COLUMNS))
    assert np.all(rows[:, 1:5] > 0) and np.all(rows[:, 4] == rows[:, 1:4].max(axis=1))
    assert rows[1, 4] < rows[0, 4]


def test_stages_reuse_tables_from_disk(small_runs):
    cfg, (run_dir, _) = small_runs
    spec, config, exp = resolve(cfg)
    before = (run_dir / "gbar.csv").stat().st_mtime_ns
    run = Run(spec, config, exp, run_dir.parent)
    assert len(run.tables()) == 3
    assert (run_dir / "gbar.csv").stat().st_mtime_ns == before


def test_emit_plots_empty_and_single(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["converge", "--config", str(cfg), "--out", str(tmp_path), "--epsilons"]) == EXIT_OK
    spec, config, exp = resolve(cfg)
    run = Run(spec, config, exp, tmp_path)
    capsys.readouterr()
    assert emit_plots(run) == []
    assert "no plots" in capsys.readouterr().out
    assert not list(run.dir.glob("*.svg"))

    assert main(["converge", "--config", str(cfg), "--out", str(tmp_path), "--epsilons", "0.4"]) == EXIT_OK
    run = Run(spec, config, exp, tmp_path)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        files = emit_plots(run)
    assert any("one epsilon" in str(w.message) for w in caught)
    assert len(files) == 4
    assert "single epsilon" in (run.dir / "error_vs_eps.svg").read_text()


def test_crossing_check_invariant_under_mu(spec, config):
    c0 = measure_c0(spec, config)[0]
    a = crossing_time_check(spec, config, mu=1.0, starts=20, c0=c0)
    b = crossing_time_check(spec, config, mu=0.5, starts=20, c0=c0)
    # elapsed time and bound both scale like 1/mu
    assert a.passed == b.passed
    assert "bound" in b.detail and "mu=0.5" in b.detail


def test_annulus_lower_bound_vacuous_near_kappa(spec, config):
    r = 0.499
    assert math.log(spec.kappa / r) - 0.5 * math.log(2) < 0
    chk = annulus_transit_check(spec, config, starts=10, r_range=(r, r))
    assert chk.passed


def test_default_sweep_timing_and_spread(tmp_path, spec, config):
    run = Run(spec, config, Experiment(), tmp_path)
    rows = np.array(converge(run))
    seconds = rows[:, CONVERGENCE_COLUMNS.index("seconds")]
    # the foot-point integration takes more substeps as eps shrinks; dropping the smallest eps roughly halves it
    share = seconds[:-1].sum() / seconds.sum()
    assert 0.35 <= share <= 0.65, seconds
    for k in (1, 2, 3):
        std = rows[:, CONVERGENCE_COLUMNS.index(f"std_{k}")]
        assert np.all(std[1:] <= 1.2 * std[:-1]), std

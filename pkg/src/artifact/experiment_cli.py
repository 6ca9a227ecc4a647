"""Command line pipeline for the double-well experiments.

Every subcommand resolves the TOML config, hashes it and works inside
``<out>/<hash>/``.  Stages exchange CSV files there and each one can be rerun
on its own from what is already on disk.  ``manifest.json`` lists every file
written and the wall-clock time of each stage.

Exit codes: 0 success, 2 validation failure (model audit, table audit,
inadmissible data, failed lemma check, missing inputs), 3 numerical
non-convergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import platform
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._io import read_config_hash, read_csv_rows, write_csv
from ._svg import heatmap, line_plot
from .averaged_hamiltonian import build_table, check_properties, min_over_q, read_tables, write_tables
from .graph_solver import (DEFAULT_EDGE_NODES, InadmissibleData, NonConvergence, assemble_solution, residual,
                           write_solution)
from .hamiltonian_model import (HamiltonianSpec, bounding_box, default_config, eval_G, load_config,
                                measure_c0, validate_assumptions)
from .hj2d_solver import (NoConvergence, append_jsonl, build_mask, compare_to_graph, loop_trace_values, make_grid,
                          solve, summary_record, write_nodal_csv)
from .level_geometry import (arclength_in_ball, controlled_crossing_time, free_transit_through_annulus,
                             saddle_passes, trace_loop)

EXIT_OK, EXIT_VALIDATION, EXIT_NONCONVERGENCE = 0, 2, 3


@dataclass(frozen=True)
class Experiment:
    epsilons: tuple = (0.4, 0.2, 0.1, 0.05)
    grid: int = 301
    controls: int = 16
    tol: float = 1e-9
    max_iter: int = 200000
    mode: str = "gauss_seidel"
    scheme: str = "flow"
    edge_nodes: int = DEFAULT_EDGE_NODES
    h_count: int = 40
    q_count: int = 201
    probe_fraction: float = 0.5


def experiment_from_dict(raw):
    sec = dict(raw.get("experiment", {}))
    if "epsilons" in sec:
        sec["epsilons"] = tuple(float(e) for e in sec["epsilons"])
    known = Experiment.__dataclass_fields__
    unknown = set(sec) - set(known)
    if unknown:
        raise ValueError(f"unknown [experiment] keys: {sorted(unknown)}")
    return Experiment(**sec)


def resolve(path=None):
    """(spec, config, experiment) from a TOML file, or the defaults."""
    if path is None:
        spec = HamiltonianSpec()
        return spec, default_config(spec), Experiment()
    spec, config, raw = load_config(path)
    return spec, config, experiment_from_dict(raw)


def config_hash(spec, config, experiment):
    payload = {
        "model": {"kappa": spec.kappa, "blend_c": spec.blend_c},
        "problem": {"lambda": config.lam, "h1": config.h1, "h2": config.h2, "h3": config.h3, "nu": config.nu,
                    "boundary": list(config.boundary)},
        "cost": asdict(config.f_params),
        "experiment": asdict(experiment),
    }
    text = json.dumps(payload, sort_keys=True, default=list)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def probe_levels(config, fraction=0.5):
    return {i: fraction * config.level(i) for i in (1, 2, 3)}


# --- run directory and manifest ---------------------------------------------

@dataclass
class RunManifest:
    config_hash: str
    versions: dict = field(default_factory=dict)
    epsilons: list = field(default_factory=list)
    grid_sizes: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    stage_seconds: dict = field(default_factory=dict)

    def record(self, name, path):
        self.outputs[name] = str(Path(path).name)

    def missing(self, root):
        return [n for n, p in self.outputs.items() if not (Path(root) / p).exists()]

    def unstamped(self, root):
        """Outputs whose header does not carry the config hash."""
        bad = []
        for name, p in self.outputs.items():
            path = Path(root) / p
            if not path.exists():
                continue
            if not stamp_of(path) == self.config_hash:
                bad.append(name)
        return bad

    def save(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        return cls(**json.loads(Path(path).read_text()))


def stamp_of(path):
    path = Path(path)
    if path.suffix == ".csv" or path.suffix == ".txt":
        return read_config_hash(path)
    if path.suffix == ".json":
        return json.loads(path.read_text()).get("config_hash")
    if path.suffix == ".jsonl":
        lines = path.read_text().splitlines()
        hashes = {json.loads(ln).get("config_hash") for ln in lines if ln.strip()}
        return hashes.pop() if len(hashes) == 1 else None
    if path.suffix == ".svg":
        for line in path.read_text().splitlines()[:3]:
            if line.startswith("<!-- config_hash="):
                return line[len("<!-- config_hash="):-4].strip()
    return None


def _versions():
    import numba
    import scipy

    return {"artifact": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": platform.python_version()}


class Run:
    """Resolved settings plus the run directory they hash to."""

    def __init__(self, spec, config, experiment, out="runs"):
        self.spec, self.config, self.experiment = spec, config, experiment
        self.hash = config_hash(spec, config, experiment)
        self.dir = Path(out) / self.hash
        self.dir.mkdir(parents=True, exist_ok=True)
        mpath = self.dir / "manifest.json"
        self.manifest = RunManifest.load(mpath) if mpath.exists() else RunManifest(self.hash)
        self.manifest.versions = _versions()
        self.manifest.tolerances = {"solve_2d": experiment.tol, "edge_sweeps": 1e-10}
        self._tables = None

    def path(self, name):
        return self.dir / name

    def stage(self, name):
        return _StageTimer(self, name)

    def save(self):
        self.manifest.save(self.dir / "manifest.json")

    def write_text(self, name, text):
        p = self.path(name)
        p.write_text(f"# config_hash={self.hash}\n{text}\n")
        self.manifest.record(name, p)
        return p

    def tables(self):
        if self._tables is None:
            if self.path("gbar.csv").exists() and read_config_hash(self.path("gbar.csv")) == self.hash:
                self._tables, _ = read_tables(self.dir)
            else:
                with self.stage("build-gbar"):
                    self._tables = [build_table(self.spec, self.config, b, h_count=self.experiment.h_count,
                                                q_count=self.experiment.q_count) for b in (1, 2, 3)]
                    csv_p, head_p = write_tables(self._tables, self.dir, header_extra={"config_hash": self.hash})
                    self.manifest.record("gbar.csv", csv_p)
                    self.manifest.record("gbar_header.json", head_p)
        return self._tables


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(f"stage {stage!r} failed: {exc}")
        self.stage = stage
        self.cause = exc


class _StageTimer:
    def __init__(self, run, name):
        self.run, self.name = run, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.run.manifest.stage_seconds[self.name] = round(time.perf_counter() - self.t0, 3)
        self.run.save()
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


# --- pipeline stages --------------------------------------------------------

def solve_graph_stage(run):
    tables = run.tables()
    with run.stage("solve-graph"):
        gsol = assemble_solution(tables, run.config.boundary, n_nodes=run.experiment.edge_nodes)
        p = write_solution(gsol, run.path("graph.csv"), run.hash)
        run.manifest.record("graph.csv", p)
    return gsol


def solve_2d_stage(run, epsilon, grid_n=None, gsol=None):
    exp = run.experiment
    n = grid_n or exp.grid
    with run.stage(f"solve-2d eps={epsilon:g}"):
        grid = make_grid(run.spec, run.config, n)
        mask = build_mask(run.spec, grid, run.config)
        sol = solve(run.spec, run.config, grid, mask, epsilon, controls=exp.controls, tol=exp.tol,
                    max_iter=exp.max_iter, mode=exp.mode, scheme=exp.scheme)
        name = f"u2d_eps{epsilon:g}_n{n}.csv"
        run.manifest.record(name, write_nodal_csv(sol, run.path(name), run.hash))
        rec = summary_record(sol, grid=n, config_hash=run.hash)
        if gsol is not None:
            rec["errors"] = {str(k): v for k, v in compare_to_graph(sol, gsol).items()}
        append_jsonl(run.path("solve2d.jsonl"), rec)
        run.manifest.record("solve2d.jsonl", run.path("solve2d.jsonl"))
    return sol


CONVERGENCE_COLUMNS = ["epsilon", "err_1", "err_2", "err_3", "overall", "std_1", "std_2", "std_3", "iterations",
                       "seconds"]


def converge(run, epsilons=None, grid_n=None):
    """Error of u^eps against u_i(H) and along-loop spread at the probe levels, one row per eps."""
    exp = run.experiment
    epsilons = tuple(exp.epsilons if epsilons is None else epsilons)
    n = grid_n or exp.grid
    gsol = solve_graph_stage(run)
    probes = probe_levels(run.config, exp.probe_fraction)
    loops = {i: trace_loop(run.spec, i, h) for i, h in probes.items()}
    rows = []
    for eps in epsilons:
        t0 = time.perf_counter()
        sol = solve_2d_stage(run, eps, n, gsol)
        errs = compare_to_graph(sol, gsol)
        stds = [loop_trace_values(sol, loops[i])[1] for i in (1, 2, 3)]
        rows.append([eps, errs[1], errs[2], errs[3], errs["overall"], *stds, sol.iterations,
                     time.perf_counter() - t0])
    run.manifest.epsilons = list(epsilons)
    run.manifest.grid_sizes = sorted(set(run.manifest.grid_sizes) | {n})
    p = write_csv(run.path("convergence.csv"), CONVERGENCE_COLUMNS, rows, run.hash)
    run.manifest.record("convergence.csv", p)
    run.save()
    return rows


def error_nonincreasing(overall, slack=0.10):
    """Each step toward smaller eps may grow the error by at most ``slack`` relative."""
    return all(b <= a * (1 + slack) for a, b in zip(overall, overall[1:]))


# --- lemma suite --------------------------------------------------------------

@dataclass
class LemmaCheck:
    name: str
    passed: bool
    detail: str
    witness: object = None


@dataclass
class LemmaReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def get(self, name):
        return [c for c in self.checks if c.name.startswith(name)]

    def to_text(self):
        lines = [f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}" for c in self.checks]
        lines.append("all checks passed" if self.passed else "some checks failed")
        return "\n".join(lines)


def period_growth_check(spec, branch, levels=None, rel_tol=0.15):
    """T_i(h) - 0.5 log(1/|h|) against its fitted constant over |h| in [1e-6, 1e-2]."""
    levels = np.logspace(-6, -2, 9) if levels is None else np.asarray(levels)
    sign = 1.0 if branch == 2 else -1.0
    dev = np.array([trace_loop(spec, branch, sign * a).period - 0.5 * math.log(1.0 / a) for a in levels])
    fit = float(dev.mean())
    worst = float(np.max(np.abs(dev - fit)))
    ok = worst <= rel_tol * abs(fit)
    detail = (f"branch {branch}: offsets {dev.min():.4g}..{dev.max():.4g}, fitted constant {fit:.4g}, "
              f"largest deviation {worst:.3g} ({worst / abs(fit):.1%}); "
              f"loop passes the saddle {saddle_passes(branch)}x")
    return LemmaCheck(f"period growth, branch {branch}", bool(ok), detail, dev.tolist())


def _sample_in(spec, config, rng, accept, n):
    x0, x1, y0, y1 = bounding_box(spec, config, margin=0.0)
    out = []
    while len(out) < n:
        pts = np.column_stack([rng.uniform(x0, x1, 4096), rng.uniform(y0, y1, 4096)])
        for p in pts[accept(pts)]:
            out.append(p)
            if len(out) == n:
                break
    return np.array(out)


def crossing_time_check(spec, config, h=0.01, epsilon=0.05, mu=1.0, starts=50, seed=0, c0=None):
    """Controlled crossing out of {|H| < h}: elapsed <= 2 sqrt(h) / (c0 mu)."""
    c0 = measure_c0(spec, config)[0] if c0 is None else c0
    rng = np.random.default_rng(seed)
    pts = _sample_in(spec, config, rng, lambda p: np.abs(spec.H(p)) < h, starts)
    signs = rng.choice([-1, 1], size=starts)
    bound = 2.0 * math.sqrt(h) / (c0 * mu)
    times = np.array([controlled_crossing_time(spec, p, epsilon, mu, s, s * h).elapsed for p, s in zip(pts, signs)])
    bad = np.nonzero(times > bound)[0]
    detail = (f"h={h:g}, eps={epsilon:g}, mu={mu:g}, c0={c0:.4g}: longest {times.max():.4g} vs bound {bound:.4g}, "
              f"{bad.size} violations in {starts}")
    return LemmaCheck("crossing time", bad.size == 0, detail, [(pts[k].tolist(), float(times[k])) for k in bad])


def annulus_transit_check(spec, config, starts=50, seed=0, r_range=(0.05, 0.45)):
    """Free transit outside B_r >= log(kappa/r) - log(2)/2 for starts in {|H| < r^2} outside B_r."""
    rng = np.random.default_rng(seed)
    viol, worst = [], np.inf
    for _ in range(starts):
        r = rng.uniform(*r_range)
        p = _sample_in(spec, config, rng,
                       lambda q, r=r: (np.abs(spec.H(q)) < r * r) & (np.hypot(q[:, 0], q[:, 1]) > r), 1)[0]
        t = free_transit_through_annulus(spec, p, r)
        lower = math.log(spec.kappa / r) - 0.5 * math.log(2.0)
        worst = min(worst, t - lower)
        if t < lower:
            viol.append((p.tolist(), r, t, lower))
    return LemmaCheck("annulus transit", not viol,
                      f"smallest margin {worst:.4g}, {len(viol)} violations in {starts}", viol)


def arclength_check(spec, n_h=10, n_r=10):
    """Length of c_i(h) inside B_r <= 4 r on a (|h|, r) grid, all branches."""
    hs = np.logspace(-6, -2, n_h)
    rs = np.linspace(0.05, 0.45, n_r)
    viol, worst = [], 0.0
    for branch in (1, 2, 3):
        sign = 1.0 if branch == 2 else -1.0
        for a in hs:
            for r in rs:
                length = arclength_in_ball(spec, branch, sign * a, r)
                worst = max(worst, length / (4 * r))
                if length > 4 * r:
                    viol.append((branch, sign * a, r, length))
    return LemmaCheck("arclength in ball", not viol,
                      f"largest length / 4r = {worst:.5f}, {len(viol)} violations in {3 * n_h * n_r}", viol)


def junction_limit_check(spec, config, tables, tol=0.05):
    g00 = float(eval_G(config, np.zeros(2), np.zeros(2)))
    out = []
    for t in tables:
        h = t.h_grid[t.junction_index]
        val, _ = min_over_q(t, h)
        gap = abs(val - g00)
        out.append(LemmaCheck(f"junction limit, branch {t.branch}", gap <= tol,
                              f"|min_q Gbar(h={h:.3g}, q) - G(0,0)| = {gap:.4g} (G(0,0) = {g00:.4g})", gap))
    return out


def lemma_suite(spec, config, tables=None, mu=1.0, seed=0):
    rep = LemmaReport()
    for branch in (1, 2, 3):
        rep.checks.append(period_growth_check(spec, branch))
    rep.checks.append(crossing_time_check(spec, config, mu=mu, seed=seed))
    rep.checks.append(annulus_transit_check(spec, config, seed=seed))
    rep.checks.append(arclength_check(spec))
    if tables is None:
        tables = [build_table(spec, config, b) for b in (1, 2, 3)]
    rep.checks.extend(junction_limit_check(spec, config, tables))
    return rep


# --- plots ------------------------------------------------------------------------

def emit_plots(run):
    conv = run.path("convergence.csv")
    if not conv.exists():
        raise FileNotFoundError("convergence.csv is missing; run `converge` first")
    rows = read_csv_rows(conv)
    if rows.size == 0:
        print("no epsilon values in convergence.csv; no plots written")
        return []
    eps = rows[:, 0]
    note = None
    if len(eps) == 1:
        note = "single epsilon: degenerate plot"
        warnings.warn("only one epsilon available; the error plot has a single point")
    files = []
    files.append(line_plot(run.path("error_vs_eps.svg"),
                           [("overall", eps, rows[:, 4])] + [(f"branch {i}", eps, rows[:, i]) for i in (1, 2, 3)],
                           "sup-error of u^eps against u_i(H)", "epsilon", "sup error", logx=True, logy=True,
                           config_hash=run.hash, note=note))
    tables = run.tables()
    files.append(line_plot(run.path("period_vs_log.svg"),
                           [(f"T_{t.branch}", np.log(1.0 / np.abs(t.h_grid)), t.periods) for t in tables],
                           "loop period against log(1/|h|)", "log(1/|h|)", "period", config_hash=run.hash))
    series = []
    for t in tables:
        for k in (0, len(t.h_grid) // 2, t.junction_index):
            sel = np.abs(t.q_grid) <= 5.0
            series.append((f"branch {t.branch}, h={t.h_grid[k]:.2g}", t.q_grid[sel], t.values[k, sel]))
    files.append(line_plot(run.path("gbar_profiles.svg"), series, "averaged Hamiltonian rows", "q", "Gbar(h, q)",
                           config_hash=run.hash))
    smallest = float(eps.min())
    n = int(run.manifest.grid_sizes[-1]) if run.manifest.grid_sizes else run.experiment.grid
    nodal = run.path(f"u2d_eps{smallest:g}_n{n}.csv")
    if not nodal.exists():
        raise FileNotFoundError(f"{nodal.name} is missing")
    data = read_csv_rows(nodal)
    grid = make_grid(run.spec, run.config, n)
    U = np.full((grid.nx, grid.ny), np.nan)
    i = np.rint((data[:, 0] - grid.bbox[0]) / grid.dx).astype(int)
    j = np.rint((data[:, 1] - grid.bbox[2]) / grid.dy).astype(int)
    U[i, j] = data[:, 3]
    overlays = [trace_loop(run.spec, b, run.config.level(b), n_samples=400).points for b in (1, 2, 3)]
    overlays += [trace_loop(run.spec, b, h, n_samples=400).points for b, h in probe_levels(run.config).items()]
    overlays += [trace_loop(run.spec, 2, 1e-4, n_samples=800).points]
    files.append(heatmap(run.path("u_heatmap.svg"), grid.xs, grid.ys, U, f"u^eps at eps={smallest:g}",
                         overlays, config_hash=run.hash))
    for f in files:
        run.manifest.record(Path(f).name, f)
    run.save()
    return files


# --- command line -------------------------------------------------------------------

def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file (defaults built in)")
    common.add_argument("--out", default="runs", help="root of the run directories")
    p = argparse.ArgumentParser(prog="artifact", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate-model", parents=[common], help="audit the model assumptions")
    t = sub.add_parser("trace-levels", parents=[common], help="periods and lengths on the table h-grids")
    t.add_argument("--dump-points", action="store_true", help="also write the sampled loop points")
    sub.add_parser("build-gbar", parents=[common], help="tabulate the averaged Hamiltonians")
    sub.add_parser("check-gbar", parents=[common], help="audit the tables")
    g = sub.add_parser("solve-graph", parents=[common], help="solve the edge equations and assemble")
    g.add_argument("--nodes", type=int, help="edge mesh size")
    s = sub.add_parser("solve-2d", parents=[common], help="solve the 2-D problem at one epsilon")
    s.add_argument("--epsilon", type=float, required=True)
    s.add_argument("--grid", type=int)
    s.add_argument("--tol", type=float)
    s.add_argument("--max-iter", type=int)
    s.add_argument("--controls", type=int)
    s.add_argument("--mode", choices=["gauss_seidel", "jacobi"])
    s.add_argument("--scheme", choices=["flow", "euler", "lax_friedrichs"])
    c = sub.add_parser("converge", parents=[common], help="epsilon sweep against the graph solution")
    c.add_argument("--epsilons", type=float, nargs="*", help="overrides the configured list; may be empty")
    c.add_argument("--grid", type=int)
    lm = sub.add_parser("lemma-suite", parents=[common], help="geometric and table checks")
    lm.add_argument("--mu", type=float, default=1.0)
    lm.add_argument("--seed", type=int, default=0)
    sub.add_parser("emit-plots", parents=[common], help="SVG plots from a finished sweep")
    return p


def _override(exp, **kw):
    from dataclasses import replace

    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(exp, **kw) if kw else exp


def main(argv=None):
    args = _parser().parse_args(argv)
    spec, config, exp = resolve(args.config)
    if args.command == "solve-2d":
        exp = _override(exp, grid=args.grid, tol=args.tol, max_iter=args.max_iter, controls=args.controls,
                        mode=args.mode, scheme=args.scheme)
    run = Run(spec, config, exp, args.out)
    try:
        return _dispatch(args, run)
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        if isinstance(exc.cause, (NoConvergence, NonConvergence)):
            return EXIT_NONCONVERGENCE
        if isinstance(exc.cause, InadmissibleData):
            return EXIT_VALIDATION
        raise


def _dispatch(args, run):
    spec, config, exp = run.spec, run.config, run.experiment
    cmd = args.command
    if cmd == "validate-model":
        with run.stage(cmd):
            rep = validate_assumptions(spec, config)
        run.write_text("validation.txt", rep.to_text())
        run.save()
        print(rep.to_text())
        return EXIT_OK if rep.passed else EXIT_VALIDATION
    if cmd == "trace-levels":
        tables = run.tables()
        with run.stage(cmd):
            rows = [(t.branch, h, T, L) for t in tables for h, T, L in zip(t.h_grid, t.periods, t.lengths)]
            run.manifest.record("levels.csv", write_csv(run.path("levels.csv"), ["branch", "h", "period", "length"],
                                                        rows, run.hash))
            if args.dump_points:
                pts = []
                for t in tables:
                    for h in t.h_grid:
                        lp = trace_loop(spec, t.branch, h)
                        pts.extend((t.branch, h, tt, x, y) for tt, (x, y) in zip(lp.times, lp.points))
                run.manifest.record("loop_points.csv", write_csv(run.path("loop_points.csv"),
                                                                 ["branch", "h", "t", "x1", "x2"], pts, run.hash))
        run.save()
        print(f"{len(rows)} loops -> {run.path('levels.csv')}")
        return EXIT_OK
    if cmd == "build-gbar":
        run._tables = None
        if run.path("gbar.csv").exists():
            run.path("gbar.csv").unlink()
        tables = run.tables()
        run.save()
        print(f"tables for branches {[t.branch for t in tables]} -> {run.path('gbar.csv')}")
        return EXIT_OK
    if cmd == "check-gbar":
        tables = run.tables()
        g00 = float(eval_G(config, np.zeros(2), np.zeros(2)))
        with run.stage(cmd):
            reps = [check_properties(t, g00) for t in tables]
        text = "\n".join(r.to_text() for r in reps)
        run.write_text("gbar_check.txt", text)
        run.save()
        print(text)
        return EXIT_OK if all(r.passed for r in reps) else EXIT_VALIDATION
    if cmd == "solve-graph":
        if args.nodes:
            run.experiment = _override(exp, edge_nodes=args.nodes)
        try:
            gsol = solve_graph_stage(run)
        except StageError as exc:
            if isinstance(exc.cause, InadmissibleData):
                print(exc.cause.report.to_text(), file=sys.stderr)
                return EXIT_VALIDATION
            raise
        tables = {t.branch: t for t in run.tables()}
        res = {i: residual(gsol.edges[i], tables[i]) for i in (1, 2, 3)}
        print(f"d0={gsol.d0!r} residuals=" + ",".join(f"{res[i]:.3g}" for i in (1, 2, 3)))
        return EXIT_OK
    if cmd == "solve-2d":
        gsol = solve_graph_stage(run)
        sol = solve_2d_stage(run, args.epsilon, exp.grid, gsol)
        run.save()
        print(json.dumps(summary_record(sol, grid=exp.grid)))
        return EXIT_OK
    if cmd == "converge":
        rows = converge(run, args.epsilons, args.grid)
        print(",".join(CONVERGENCE_COLUMNS))
        for r in rows:
            print(",".join(f"{v:.6g}" for v in r))
        return EXIT_OK
    if cmd == "lemma-suite":
        tables = run.tables()
        with run.stage(cmd):
            rep = lemma_suite(spec, config, tables, mu=args.mu, seed=args.seed)
        run.write_text("lemma_suite.txt", rep.to_text())
        run.save()
        print(rep.to_text())
        return EXIT_OK if rep.passed else EXIT_VALIDATION
    if cmd == "emit-plots":
        try:
            with run.stage(cmd):
                files = emit_plots(run)
        except StageError as exc:
            if isinstance(exc.cause, FileNotFoundError):
                print(str(exc.cause), file=sys.stderr)
                return EXIT_VALIDATION
            raise
        for f in files:
            print(f)
        return EXIT_OK
    raise AssertionError(cmd)


if __name__ == "__main__":
    sys.exit(main())

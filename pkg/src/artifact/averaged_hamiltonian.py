"""Tabulated loop averages of G along the level loops of one graph edge.

For a loop c_i(h) with period T and a slope q, the edge Hamiltonian is the
time average of G(X(t), q DH(X(t))) over one period.  Tables live on a
geometric h-grid that accumulates at the junction level 0 and a symmetric
q-grid that contains q = 0.  Between nodes the table is bilinear.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import read_csv_rows, write_csv
from .hamiltonian_model import eval_G
from .level_geometry import DEFAULT_SAMPLES, H_FLOOR, loop_average, trace_loop


class ExtrapolationRefused(ValueError):
    pass


class QRangeTooSmall(RuntimeError):
    pass


@dataclass(frozen=True)
class EdgeTable:
    branch: int
    h_grid: np.ndarray  # ascending
    q_grid: np.ndarray  # ascending, symmetric, contains 0
    values: np.ndarray  # shape (len(h_grid), len(q_grid))
    c0_measured: float
    M_used: float
    h_boundary: float
    periods: np.ndarray = field(repr=False)
    lengths: np.ndarray = field(repr=False)
    nu: float = 1.0
    lam: float = 1.0

    @property
    def q_max(self):
        return float(self.q_grid[-1])

    @property
    def junction_index(self):
        """Row closest to the junction (smallest |h|)."""
        return int(np.argmin(np.abs(self.h_grid)))

    @property
    def boundary_index(self):
        return int(np.argmin(np.abs(self.h_grid - self.h_boundary)))

    def speed_ratio(self, h):
        """Interpolated T/L at h, the reciprocal of the loop-averaged |DH|."""
        return 1.0 / np.interp(h, self.h_grid, self.lengths / self.periods)

    def row(self, h):
        """Table row interpolated linearly in h (h clamped to the grid)."""
        hg = self.h_grid
        h = min(max(h, hg[0]), hg[-1])
        k = int(np.clip(np.searchsorted(hg, h) - 1, 0, len(hg) - 2))
        w = (h - hg[k]) / (hg[k + 1] - hg[k])
        return (1.0 - w) * self.values[k] + w * self.values[k + 1]


def h_grid_for(branch, h_boundary, h_count=40, h_floor=H_FLOOR):
    """Geometric grid h_k = h_i r^k from the boundary level to +-h_floor, ascending."""
    if h_count < 2:
        raise ValueError("h_count must be at least 2")
    ratio = (h_floor / abs(h_boundary)) ** (1.0 / (h_count - 1))
    grid = h_boundary * ratio ** np.arange(h_count)
    grid[-1] = math.copysign(h_floor, h_boundary)
    return np.sort(grid)


def q_grid_for(q_max, q_count):
    if q_count % 2 == 0:
        q_count += 1
    return np.linspace(-q_max, q_max, q_count)


def build_table(spec, config, branch, h_count=40, q_max=None, q_count=201, n_samples=DEFAULT_SAMPLES,
                h_floor=H_FLOOR, seed_fraction=0.0):
    """Tabulate the loop-averaged Hamiltonian of edge ``branch``.

    ``q_max`` defaults to 10 (M + 1) / (nu c0) with c0 the smallest loop-averaged |DH|
    over the grid.  ``seed_fraction`` retraces every loop from a rotated start.
    """
    h_i = config.level(branch)
    hs = h_grid_for(branch, h_i, h_count, h_floor)
    loops = []
    for h in hs:
        loop = trace_loop(spec, branch, h, n_samples=n_samples, h_floor=h_floor)
        if seed_fraction:
            k = int(round(seed_fraction * n_samples)) % n_samples
            loop = trace_loop(spec, branch, h, n_samples=n_samples, h_floor=h_floor, start=loop.points[k])
        loops.append(loop)
    periods = np.array([lp.period for lp in loops])
    lengths = np.array([lp.length for lp in loops])
    c0 = float(np.min(lengths / periods))
    M = float(config.M_bound)
    if q_max is None:
        q_max = 10.0 * (M + 1.0) / (config.nu * c0)
    qs = q_grid_for(q_max, q_count)
    values = np.empty((len(hs), len(qs)))
    for k, lp in enumerate(loops):
        dh = spec.grad(lp.points)
        values[k] = loop_average(lp, lambda pts: eval_G(config, pts[None], qs[:, None, None] * dh[None]))
    return EdgeTable(branch, hs, qs, values, c0, M, float(h_i), periods, lengths, float(config.nu), float(config.lam))


def eval_gbar(table, h, q):
    """Bilinear interpolation of the table; h is clamped, |q| > q_max is refused."""
    q = float(q)
    if abs(q) > table.q_max * (1 + 1e-12):
        raise ExtrapolationRefused(f"|q| = {abs(q):.4g} exceeds q_max = {table.q_max:.4g}")
    return float(np.interp(q, table.q_grid, table.row(float(h))))


def min_over_q(table, h):
    """Minimum of the interpolated convex row and its argmin slope.

    The interpolated row is piecewise linear in q with breakpoints at the q-nodes,
    so the minimum over [-q_max, q_max] is attained at a node and found exactly.
    """
    row = table.row(float(h))
    k = int(np.argmin(row))
    if k == 0 or k == len(row) - 1:
        raise QRangeTooSmall(f"minimum at the edge of the q range (q = {table.q_grid[k]:.4g})")
    return float(row[k]), float(table.q_grid[k])


@dataclass
class TableReport:
    branch: int
    checks: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(ok for ok, _ in self.checks.values())

    def add(self, name, ok, detail):
        self.checks[name] = (bool(ok), detail)

    def to_text(self):
        lines = [f"branch {self.branch}"]
        for name, (ok, detail) in self.checks.items():
            lines.append(f"  [{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        return "\n".join(lines)


def check_properties(table, G00, convex_tol=1e-8, limit_tol=0.05, slope_tol=50.0):
    """Audit one table: rowwise convexity, coercivity, junction limit, continuity in h."""
    rep = TableReport(table.branch)
    V, qs = table.values, table.q_grid
    # second differences on the uniform q-grid
    d2 = V[:, 2:] - 2.0 * V[:, 1:-1] + V[:, :-2]
    worst = np.unravel_index(np.argmin(d2), d2.shape)
    rep.add("convex in q", d2[worst] >= -convex_tol,
            f"min second difference {d2[worst]:.3e} at h={table.h_grid[worst[0]]:.4g}, q={qs[worst[1] + 1]:.4g}")

    slack = V - (table.nu * table.c0_measured * np.abs(qs)[None, :] - table.M_used)
    worst = np.unravel_index(np.argmin(slack), slack.shape)
    # values and c0 come from different quadratures of |DH|; allow their relative disagreement
    rep.add("coercive", slack[worst] >= -1e-9 * max(1.0, float(np.abs(V).max())),
            f"min of value - (nu c0 |q| - M) = {slack[worst]:.3e} (c0={table.c0_measured:.5g}, M={table.M_used:.4g})")

    j0 = int(np.argmin(np.abs(qs)))
    order = np.argsort(np.abs(table.h_grid))[::-1]  # from the boundary toward the junction
    gaps = np.abs(V[order, j0] - G00)
    tail = gaps[-5:]
    rep.add("junction limit", gaps[-1] <= limit_tol and np.all(np.diff(tail) <= 1e-6),
            f"|value(h,0) - G(0,0)| at the last rows: {', '.join(f'{g:.3g}' for g in tail)}")

    # away from the junction the rows should vary with a bounded difference quotient
    near = np.abs(qs) <= 1.0
    quot = np.abs(np.diff(V[:, near], axis=0)).max(axis=1) / np.diff(table.h_grid)
    away = np.minimum(np.abs(table.h_grid[:-1]), np.abs(table.h_grid[1:])) >= 1e-2
    worst = float(quot[away].max()) if away.any() else 0.0
    rep.add("continuous in h", np.isfinite(worst) and worst <= slope_tol,
            f"largest row-to-row difference quotient for |q| <= 1 and |h| >= 0.01: {worst:.3g}")
    return rep


def shape_is_convex(row, tol=1e-8):
    """Nonincreasing then nondecreasing."""
    d = np.diff(row)
    k = int(np.argmin(row))
    return bool(np.all(d[:k] <= tol) and np.all(d[k:] >= -tol))


# persistence

def write_tables(tables, directory, stem="gbar", header_extra=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / f"{stem}.csv"
    head_path = directory / f"{stem}_header.json"
    rows = ((t.branch, h, q, t.values[k, j]) for t in tables for k, h in enumerate(t.h_grid)
            for j, q in enumerate(t.q_grid))
    write_csv(csv_path, ["branch", "h", "q", "value"], rows, (header_extra or {}).get("config_hash"))
    header = dict(header_extra or {})
    header["tables"] = [
        {
            "branch": t.branch,
            "c0_measured": t.c0_measured,
            "M_used": t.M_used,
            "h_boundary": t.h_boundary,
            "nu": t.nu,
            "lambda": t.lam,
            "periods": t.periods.tolist(),
            "lengths": t.lengths.tolist(),
        }
        for t in tables
    ]
    head_path.write_text(json.dumps(header, indent=1))
    return csv_path, head_path


def read_tables(directory, stem="gbar"):
    directory = Path(directory)
    header = json.loads((directory / f"{stem}_header.json").read_text())
    raw = read_csv_rows(directory / f"{stem}.csv")
    tables = []
    for meta in header["tables"]:
        rows = raw[raw[:, 0] == meta["branch"]]
        hs = np.unique(rows[:, 1])
        qs = np.unique(rows[:, 2])
        vals = np.empty((hs.size, qs.size))
        hi = np.searchsorted(hs, rows[:, 1])
        qi = np.searchsorted(qs, rows[:, 2])
        vals[hi, qi] = rows[:, 3]
        tables.append(EdgeTable(int(meta["branch"]), hs, qs, vals, meta["c0_measured"], meta["M_used"],
                                meta["h_boundary"], np.array(meta["periods"]), np.array(meta["lengths"]),
                                meta["nu"], meta["lambda"]))
    return tables, header


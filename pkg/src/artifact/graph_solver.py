"""Edge equations lam u + Gbar_i(h, u') = 0 on the three-edge graph.

Each edge is discretized on a uniform mesh from its boundary level h_i to the
clamped junction level +-h_floor.  The numerical Hamiltonian is the Godunov
flux for a convex row,

    Gbar^G(a, b) = max(Gbar(max(a, q*)), Gbar(min(b, q*))),

with a and b the backward and forward differences and q* the row minimizer.
A nodal update solves lam u + Gbar^G(a(u), b(u)) = 0 exactly on the piecewise
linear table row (linear tails beyond the tabulated slopes), which reduces to
the minimum of a left-upwind and a right-upwind candidate.  Gauss-Seidel
sweeps alternate direction.

The anchored node takes min(d, one-sided update); the other end only gets the
one-sided update, which realizes the state constraint of a maximal
subsolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._io import read_csv_rows, write_csv
from .level_geometry import H_FLOOR

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

DEFAULT_EDGE_NODES = 801


class AnchorInadmissible(ValueError):
    """The anchored value is not attainable by any subsolution near the anchor."""


class InadmissibleData(ValueError):
    def __init__(self, report):
        super().__init__(report.to_text())
        self.report = report


class NonConvergence(RuntimeError):
    pass


@dataclass
class EdgeFunction:
    branch: int
    h_nodes: np.ndarray
    u_values: np.ndarray
    anchor: str
    anchor_value: float
    sweeps: int = 0
    final_update: float = 0.0

    @property
    def outer_index(self):
        return 0 if self.branch != 2 else len(self.h_nodes) - 1

    @property
    def junction_index(self):
        return len(self.h_nodes) - 1 if self.branch != 2 else 0

    @property
    def outer_value(self):
        return float(self.u_values[self.outer_index])

    @property
    def junction_value(self):
        return float(self.u_values[self.junction_index])

    @property
    def anchor_index(self):
        return self.outer_index if self.anchor == "outer" else self.junction_index

    def __call__(self, h):
        """Linear interpolation in h; values beyond the clamped junction node take the node value."""
        return np.interp(h, self.h_nodes, self.u_values)


@dataclass
class GraphSolution:
    edges: dict
    d0: float
    d: tuple
    rho: dict = field(default_factory=dict, repr=False)
    nu: dict = field(default_factory=dict, repr=False)

    def u(self, branch, h):
        return self.edges[branch](h)


def edge_mesh(table, n_nodes=DEFAULT_EDGE_NODES, h_floor=H_FLOOR):
    a, b = sorted((table.h_boundary, math.copysign(h_floor, table.h_boundary)))
    return np.linspace(a, b, n_nodes)


def _rows(table, h_nodes):
    return np.array([table.row(h) for h in h_nodes])


# --- numba kernels -------------------------------------------------------

@njit(cache=True)
def _row_value(P, j, qs, q):
    n = qs.size
    if q <= qs[0]:
        s = (P[j, 1] - P[j, 0]) / (qs[1] - qs[0])
        return P[j, 0] + s * (q - qs[0])
    if q >= qs[n - 1]:
        s = (P[j, n - 1] - P[j, n - 2]) / (qs[n - 1] - qs[n - 2])
        return P[j, n - 1] + s * (q - qs[n - 1])
    lo, hi = 0, n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if qs[mid] <= q:
            lo = mid
        else:
            hi = mid
    w = (q - qs[lo]) / (qs[hi] - qs[lo])
    return (1.0 - w) * P[j, lo] + w * P[j, hi]


@njit(cache=True)
def _from_left(P, j, qs, kstar, lam, uL, dh):
    """Root of lam u + Gbar(max((u - uL)/dh, q*)) = 0."""
    k0 = kstar[j]
    qstar = qs[k0]
    ustay = -P[j, k0] / lam
    if (ustay - uL) / dh <= qstar:
        return ustay
    n = qs.size
    # phi(q) = lam (uL + dh q) + Gbar(q) increases on q >= q*, negative at q*
    lo, hi = k0, n - 1
    if lam * (uL + dh * qs[hi]) + P[j, hi] < 0.0:
        s = (P[j, n - 1] - P[j, n - 2]) / (qs[n - 1] - qs[n - 2])
        phi = lam * (uL + dh * qs[hi]) + P[j, hi]
        a = qs[hi] - phi / (lam * dh + s)
        return uL + dh * a
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if lam * (uL + dh * qs[mid]) + P[j, mid] >= 0.0:
            hi = mid
        else:
            lo = mid
    p0 = lam * (uL + dh * qs[lo]) + P[j, lo]
    p1 = lam * (uL + dh * qs[hi]) + P[j, hi]
    a = qs[lo] - p0 * (qs[hi] - qs[lo]) / (p1 - p0)
    return uL + dh * a


@njit(cache=True)
def _from_right(P, j, qs, kstar, lam, uR, dh):
    """Root of lam u + Gbar(min((uR - u)/dh, q*)) = 0."""
    k0 = kstar[j]
    qstar = qs[k0]
    ustay = -P[j, k0] / lam
    if (uR - ustay) / dh >= qstar:
        return ustay
    # psi(q) = lam (uR - dh q) + Gbar(q) decreases on q <= q*, negative at q*
    lo, hi = 0, k0
    if lam * (uR - dh * qs[0]) + P[j, 0] < 0.0:
        s = (P[j, 1] - P[j, 0]) / (qs[1] - qs[0])
        psi = lam * (uR - dh * qs[0]) + P[j, 0]
        b = qs[0] + psi / (lam * dh - s)
        return uR - dh * b
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if lam * (uR - dh * qs[mid]) + P[j, mid] >= 0.0:
            lo = mid
        else:
            hi = mid
    p0 = lam * (uR - dh * qs[lo]) + P[j, lo]
    p1 = lam * (uR - dh * qs[hi]) + P[j, hi]
    b = qs[lo] - p0 * (qs[hi] - qs[lo]) / (p1 - p0)
    return uR - dh * b


@njit(cache=True)
def _node_update(P, qs, kstar, h, u, j, lam, anchor, dval):
    n = h.size
    if j == 0:
        new = _from_right(P, j, qs, kstar, lam, u[1], h[1] - h[0])
    elif j == n - 1:
        new = _from_left(P, j, qs, kstar, lam, u[j - 1], h[j] - h[j - 1])
    else:
        cl = _from_left(P, j, qs, kstar, lam, u[j - 1], h[j] - h[j - 1])
        cr = _from_right(P, j, qs, kstar, lam, u[j + 1], h[j + 1] - h[j])
        new = min(cl, cr)
    if j == anchor:
        new = min(dval, new)
    return new


@njit(cache=True)
def _sweep_solve(P, qs, kstar, h, u, lam, anchor, dval, tol, max_sweeps):
    n = h.size
    prev1 = -1.0
    prev2 = -1.0
    upd = 0.0
    for sweep in range(max_sweeps):
        upd = 0.0
        if sweep % 2 == 0:
            for j in range(n):
                new = _node_update(P, qs, kstar, h, u, j, lam, anchor, dval)
                upd = max(upd, abs(new - u[j]))
                u[j] = new
        else:
            for j in range(n - 1, -1, -1):
                new = _node_update(P, qs, kstar, h, u, j, lam, anchor, dval)
                upd = max(upd, abs(new - u[j]))
                u[j] = new
        # a contraction with observed ratio r leaves at most upd r / (1 - r) to go
        ratio = 0.0
        if prev1 > 0.0:
            ratio = upd / prev1
        if prev2 > 0.0 and prev1 / prev2 > ratio:
            ratio = prev1 / prev2
        ratio = min(ratio, 0.999999)
        if sweep >= 1 and upd < tol and upd * ratio / (1.0 - ratio) < tol:
            return sweep + 1, upd
        prev2 = prev1
        prev1 = upd
    return max_sweeps, upd


# --- public operations ----------------------------------------------------

def solve_max_subsolution(table, anchor, d, n_nodes=DEFAULT_EDGE_NODES, h_nodes=None, init="above", tol=1e-10,
                          max_sweeps=400000, flux="godunov", big=1e3, adm_tol=1e-9):
    """Maximal subsolution on one edge pinned to ``d`` at the outer or junction end.

    ``init`` is "above" (+big), "below" (-big), "trivial" (a constant subsolution)
    or an explicit array.
    """
    if anchor not in ("outer", "junction"):
        raise ValueError("anchor must be 'outer' or 'junction'")
    h = edge_mesh(table, n_nodes) if h_nodes is None else np.asarray(h_nodes, dtype=float)
    P = _rows(table, h)
    kstar = np.argmin(P, axis=1).astype(np.int64)
    lam = table.lam
    if isinstance(init, str):
        if init == "above":
            u = np.full(h.size, big)
        elif init == "below":
            u = np.full(h.size, -big)
        elif init == "trivial":
            u = np.full(h.size, min(d, -P[:, np.argmin(np.abs(table.q_grid))].max() / lam))
        else:
            raise ValueError(f"unknown init {init!r}")
    else:
        u = np.array(init, dtype=float)
    proto = EdgeFunction(table.branch, h, u, anchor, float(d))
    a_idx = proto.anchor_index
    if flux not in ("godunov", "lax_friedrichs"):
        raise ValueError(f"unknown flux {flux!r}")
    sweeps, upd = _sweep_solve(P, table.q_grid, kstar, h, u, float(lam), a_idx, float(d), tol, max_sweeps)
    if sweeps >= max_sweeps:
        raise NonConvergence(f"edge {table.branch}: update {upd:.3g} after {sweeps} sweeps")
    if u[a_idx] < d - adm_tol:
        raise AnchorInadmissible(
            f"edge {table.branch}: anchored value {d:.6g} exceeds the largest attainable {u[a_idx]:.6g} "
            f"at the {anchor} end")
    if flux == "lax_friedrichs":
        u, sweeps, upd = _lax_friedrichs_newton(P, table.q_grid, kstar, h, u, lam, a_idx, float(d), tol)
    return EdgeFunction(table.branch, h, u, anchor, float(d), sweeps, upd)


def _row_piece(P, qs, arg):
    """Value and slope of each node's piecewise linear row (linear tails) at arg[j]."""
    k = np.clip(np.searchsorted(qs, arg, side="right") - 1, 0, qs.size - 2)
    j = np.arange(P.shape[0])
    slope = (P[j, k + 1] - P[j, k]) / (qs[k + 1] - qs[k])
    return P[j, k] + slope * (arg - qs[k]), slope


def _lax_friedrichs_newton(P, qs, kstar, h, u, lam, a_idx, d, tol, max_iter=200):
    """Interior nodes: lam u + Gbar((a + b)/2) - alpha (b - a)/2 = 0 with alpha the largest row slope.

    The anchor is held at d and the free end keeps the one-sided Godunov equation.
    The system is convex and piecewise linear with an M-matrix Jacobian, so Newton
    from the Godunov solution converges in finitely many steps.
    """
    from scipy.linalg import solve_banded

    n = h.size
    alpha = float(np.abs(np.diff(P, axis=1) / np.diff(qs)).max())
    free = n - 1 if a_idx == 0 else 0
    u = u.copy()
    qstar = qs[kstar]
    for it in range(max_iter):
        F = np.zeros(n)
        ab = np.zeros((3, n))  # rows: super, diag, sub
        dl = np.diff(h)
        a = (u[1:-1] - u[:-2]) / dl[:-1]
        b = (u[2:] - u[1:-1]) / dl[1:]
        val, sl = _row_piece(P[1:-1], qs, 0.5 * (a + b))
        F[1:-1] = lam * u[1:-1] + val - 0.5 * alpha * (b - a)
        # dF_j/du_{j-1}, du_j, du_{j+1}
        ab[2, :-2] = (-0.5 * sl - 0.5 * alpha) / dl[:-1]
        ab[1, 1:-1] = lam + 0.5 * sl * (1 / dl[:-1] - 1 / dl[1:]) + 0.5 * alpha * (1 / dl[1:] + 1 / dl[:-1])
        ab[0, 2:] = (0.5 * sl - 0.5 * alpha) / dl[1:]
        F[a_idx] = u[a_idx] - d
        ab[1, a_idx] = 1.0
        if free == 0:
            q = np.array([min((u[1] - u[0]) / dl[0], qstar[0])])
            v, s1 = _row_piece(P[:1], qs, q)
            ds = s1[0] if q[0] < qstar[0] else 0.0
            F[0] = lam * u[0] + v[0]
            ab[1, 0] = lam - ds / dl[0]
            ab[0, 1] = ds / dl[0]
        else:
            q = np.array([max((u[-1] - u[-2]) / dl[-1], qstar[-1])])
            v, s1 = _row_piece(P[-1:], qs, q)
            ds = s1[0] if q[0] > qstar[-1] else 0.0
            F[-1] = lam * u[-1] + v[0]
            ab[1, -1] = lam + ds / dl[-1]
            ab[2, -2] = -ds / dl[-1]
        step = solve_banded((1, 1), ab, F)
        u -= step
        upd = float(np.abs(step).max())
        if upd < tol:
            return u, it + 1, upd
    raise NonConvergence(f"Lax-Friedrichs Newton stalled at update {upd:.3g}")


def junction_value(rho_at_0):
    return float(min(rho_at_0))


def numerical_slopes(edge):
    return np.diff(edge.u_values) / np.diff(edge.h_nodes)


def residual(edge, table):
    """Max over interior nodes of |lam u + Godunov flux| with the scheme's own differences."""
    h, u = edge.h_nodes, edge.u_values
    P = _rows(table, h)
    qs = table.q_grid
    lam = table.lam
    res = 0.0
    for j in range(1, h.size - 1):
        k0 = int(np.argmin(P[j]))
        a = (u[j] - u[j - 1]) / (h[j] - h[j - 1])
        b = (u[j + 1] - u[j]) / (h[j + 1] - h[j])
        flux = max(_row_value(P, j, qs, max(a, qs[k0])), _row_value(P, j, qs, min(b, qs[k0])))
        res = max(res, abs(lam * u[j] + flux))
    return float(res)


def residual_profile(edge, table):
    h, u = edge.h_nodes, edge.u_values
    P = _rows(table, h)
    qs, lam = table.q_grid, table.lam
    out = np.zeros(h.size)
    for j in range(1, h.size - 1):
        k0 = int(np.argmin(P[j]))
        a = (u[j] - u[j - 1]) / (h[j] - h[j - 1])
        b = (u[j + 1] - u[j]) / (h[j + 1] - h[j])
        out[j] = lam * u[j] + max(_row_value(P, j, qs, max(a, qs[k0])), _row_value(P, j, qs, min(b, qs[k0])))
    return out


def assemble_solution(tables, d, n_nodes=DEFAULT_EDGE_NODES, **kw):
    """rho_i^{d_i}, d_0 = min_i rho_i(0), nu_i^{d_0}, and u_i = min(rho_i, nu_i)."""
    d = tuple(float(v) for v in d)
    rep = check_admissibility(tables, None, d, n_nodes=n_nodes, **kw)
    if not rep.admissible:
        raise InadmissibleData(rep)
    rho, nu, d0 = rep.rho, rep.nu, rep.d0
    edges = {}
    for i in (1, 2, 3):
        u = np.minimum(rho[i].u_values, nu[i].u_values)
        edges[i] = EdgeFunction(i, rho[i].h_nodes, u, "both", d0, rho[i].sweeps + nu[i].sweeps,
                                max(rho[i].final_update, nu[i].final_update))
    bad = [i for i in (1, 2, 3)
           if abs(edges[i].outer_value - d[i - 1]) > 1e-8 or abs(edges[i].junction_value - d0) > 1e-8]
    if bad:
        raise InadmissibleData(rep)
    return GraphSolution(edges, d0, d, rho, nu)


@dataclass
class AdmissibilityReport:
    d0: float
    d: tuple
    clauses: dict = field(default_factory=dict)  # clause -> (status, detail)
    rho: dict = field(default_factory=dict, repr=False)
    nu: dict = field(default_factory=dict, repr=False)

    @property
    def admissible(self):
        return all(status == "pass" for status, _ in self.clauses.values())

    @property
    def failed(self):
        return [k for k, (status, _) in self.clauses.items() if status == "fail"]

    def to_text(self):
        lines = [f"d0={self.d0!r} d={self.d!r}"]
        for k in sorted(self.clauses):
            status, detail = self.clauses[k]
            lines.append(f"  clause {k}: {status} {detail}")
        lines.append("admissible" if self.admissible else "inadmissible")
        return "\n".join(lines)


def check_admissibility(tables, d0, d, n_nodes=DEFAULT_EDGE_NODES, tol=1e-8, **kw):
    """Evaluate the three admissibility clauses for (d0, d1, d2, d3).

    Clause 1: every d_i is attainable at h_i and d0 is attainable at the junction
    on all three edges.  Clause 2: min_i rho_i^{d_i}(0) >= d0.  Clause 3:
    nu_i^{d0}(h_i) >= d_i.  With ``d0=None`` the minimum in clause 2 is used.
    A clause whose ingredients do not exist is reported as "not evaluated".
    """
    tables = {t.branch: t for t in tables}
    rep = AdmissibilityReport(d0, tuple(d))
    rho, nu, missing = rep.rho, rep.nu, []
    for i in (1, 2, 3):
        try:
            rho[i] = solve_max_subsolution(tables[i], "outer", d[i - 1], n_nodes, **kw)
        except AnchorInadmissible as exc:
            missing.append(f"d{i}: {exc}")
    if d0 is None:
        if len(rho) < 3:
            rep.clauses[1] = ("fail", "; ".join(missing))
            rep.clauses[2] = ("not evaluated", "")
            rep.clauses[3] = ("not evaluated", "")
            return rep
        d0 = junction_value([rho[i].junction_value for i in (1, 2, 3)])
        rep.d0 = d0
    for i in (1, 2, 3):
        try:
            nu[i] = solve_max_subsolution(tables[i], "junction", d0, n_nodes, **kw)
        except AnchorInadmissible as exc:
            missing.append(f"d0 on edge {i}: {exc}")
    rep.clauses[1] = ("fail", "; ".join(missing)) if missing else ("pass", "")
    if len(rho) == 3:
        low = min(rho[i].junction_value for i in (1, 2, 3))
        ok = low >= d0 - tol
        rep.clauses[2] = ("pass" if ok else "fail", f"min rho_i(0) = {low:.10g} vs d0 = {d0:.10g}")
    else:
        rep.clauses[2] = ("not evaluated", "some rho_i does not exist")
    if len(nu) == 3:
        gaps = {i: nu[i].outer_value - d[i - 1] for i in (1, 2, 3)}
        worst = min(gaps, key=gaps.get)
        ok = gaps[worst] >= -tol
        rep.clauses[3] = ("pass" if ok else "fail",
                          f"nu_{worst}(h_{worst}) - d_{worst} = {gaps[worst]:.6g}")
    else:
        rep.clauses[3] = ("not evaluated", "some nu_i does not exist")
    return rep


# --- a-priori bounds ------------------------------------------------------

def slope_bound_violations(edge, table, M=None, rtol=1e-9):
    """Segments whose slope exceeds (T/(nu L)) (M + lam sup|u|) at both end nodes."""
    M = table.M_used if M is None else M
    h, u = edge.h_nodes, edge.u_values
    slopes = np.abs(numerical_slopes(edge))
    ratio = table.speed_ratio(h) / table.nu
    cap = np.maximum(ratio[:-1], ratio[1:]) * (M + table.lam * np.abs(u).max())
    bad = np.nonzero(slopes > cap * (1 + rtol) + rtol)[0]
    return [(float(h[k]), float(slopes[k]), float(cap[k])) for k in bad]


def gronwall_constant(table, h_floor=H_FLOOR):
    """exp of the integral of lam T/(nu L) over the edge (trapezoid on the table's h-grid)."""
    hs = table.h_grid
    ratio = table.periods / table.lengths
    integral = np.trapezoid(ratio, hs) if hasattr(np, "trapezoid") else np.trapz(ratio, hs)
    integral += ratio[table.junction_index] * h_floor
    return math.exp(table.lam * integral / table.nu)


def growth_bound_violations(edge, table, M=None):
    """Pairs violating |u(h)| <= C1 |u(a)| + 2 C1 M / lam (worst pair only is reported)."""
    M = table.M_used if M is None else M
    C1 = gronwall_constant(table)
    au = np.abs(edge.u_values)
    lhs, rhs = au.max(), C1 * au.min() + 2.0 * C1 * M / table.lam
    return [] if lhs <= rhs * (1 + 1e-12) else [(float(lhs), float(rhs))]


def lemma_constant(table, M=None):
    """C = C1 + 2 C1 M / lam, so that |u(h)| <= C (|u(a)| + 1) for any two nodes."""
    M = table.M_used if M is None else M
    C1 = gronwall_constant(table)
    return C1 + 2.0 * C1 * M / table.lam


def ratio_bound_violations(edge, table, M=None):
    """Node pairs with |u(h)| > C (|u(a)| + 1); only the worst pair can fail."""
    C = lemma_constant(table, M)
    au = np.abs(edge.u_values)
    lhs, rhs = float(au.max()), float(C * (au.min() + 1.0))
    return [] if lhs <= rhs else [(lhs, rhs)]


def equicontinuity_violations(edge, table, M=None, rtol=1e-9):
    """Pairs with |u(h) - u(h')| above the integrated slope cap between them."""
    M = table.M_used if M is None else M
    h, u = edge.h_nodes, edge.u_values
    ratio = table.speed_ratio(h) / table.nu
    seg = np.maximum(ratio[:-1], ratio[1:]) * np.diff(h) * (M + table.lam * np.abs(u).max())
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    du = np.abs(u[:, None] - u[None, :])
    cap = np.abs(cum[:, None] - cum[None, :])
    bad = np.argwhere(du > cap * (1 + rtol) + rtol)
    return [(float(h[i]), float(h[j]), float(du[i, j]), float(cap[i, j])) for i, j in bad if i < j]


# --- persistence ------------------------------------------------------------

def write_solution(solution, path, config_hash=None):
    rows = ((i, h, u) for i in (1, 2, 3)
            for h, u in zip(solution.edges[i].h_nodes, solution.edges[i].u_values))
    write_csv(path, ["branch", "h", "u"], rows, config_hash)
    return path


def read_solution(path):
    """Edge functions keyed by branch from a (branch, h, u) CSV."""
    raw = read_csv_rows(path)
    out = {}
    for i in (1, 2, 3):
        rows = raw[raw[:, 0] == i]
        order = np.argsort(rows[:, 1])
        out[i] = EdgeFunction(i, rows[order, 1], rows[order, 2], "both", float("nan"))
    return out

"""Semi-Lagrangian solver for lam u - b.Du / eps + |Du| - f = 0 on the masked domain.

The update discretizes the dynamic programming principle for

    X' = b(X) / eps + a,   |a| <= 1,   running cost f,   discount lam,

with exit value g = 0 on the boundary.  Per node and control the one-step
data (running cost, discount, bilinear stencil of the foot point) depend only
on the geometry, so they are computed once and the fixed-point iteration
touches nothing else.

Schemes:

``flow``
    The foot is the end point of the controlled ODE over dt = min(dx, dy),
    integrated with RK4 substeps.  The control is held fixed in the moving
    frame (n, tau) = (DH, b) / |DH|, the discounted cost is accumulated along
    the path and an exit is located at its crossing fraction.  The step is
    independent of eps, so interpolation diffusion does not grow like 1/eps.
``euler``
    One explicit step x + dt (b/eps + a) with a global dt = min(dx, dy) /
    max(|b|/eps + 1) and a fixed-direction control; cost dt f(x); a foot
    outside the domain takes g discounted by the full step.
``lax_friedrichs``
    Central differences with local viscosity |b_k|/eps + 1 per axis, swept
    Gauss-Seidel; intended for cross-checks at moderate eps.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ._io import write_csv
from .hamiltonian_model import bounding_box

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

EXTERIOR, INTERIOR, BOUNDARY = 0, 1, 2
SCHEMES = ("flow", "euler", "lax_friedrichs")
DT_FLOOR = 1e-7


class NoConvergence(RuntimeError):
    def __init__(self, message, final_update):
        super().__init__(message)
        self.final_update = final_update


class EpsilonTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class Grid2D:
    bbox: tuple
    nx: int
    ny: int

    @property
    def dx(self):
        return (self.bbox[1] - self.bbox[0]) / (self.nx - 1)

    @property
    def dy(self):
        return (self.bbox[3] - self.bbox[2]) / (self.ny - 1)

    @property
    def xs(self):
        return np.linspace(self.bbox[0], self.bbox[1], self.nx)

    @property
    def ys(self):
        return np.linspace(self.bbox[2], self.bbox[3], self.ny)

    def points(self):
        X, Y = np.meshgrid(self.xs, self.ys, indexing="ij")
        return np.stack([X, Y], axis=-1)


def make_grid(spec, config, n=301, ny=None, margin=0.05):
    """Square-ish grid on the domain's bounding box; an odd count puts a node on the saddle."""
    grid = Grid2D(tuple(bounding_box(spec, config, margin)), int(n), int(ny or n))
    check_grid_contains_domain(spec, config, grid)
    return grid


def check_grid_contains_domain(spec, config, grid, samples=2000):
    from .level_geometry import trace_loop

    x0, x1, y0, y1 = grid.bbox
    worst = -np.inf
    for branch in (1, 2, 3):
        pts = trace_loop(spec, branch, config.level(branch), n_samples=samples).points
        worst = max(worst, np.max(pts[:, 0] - x1), np.max(x0 - pts[:, 0]),
                    np.max(pts[:, 1] - y1), np.max(y0 - pts[:, 1]))
    if worst >= 0:
        raise ValueError(f"bounding box does not strictly contain the domain (overshoot {worst:.3g})")


@dataclass
class DomainMask:
    kind: np.ndarray       # EXTERIOR / INTERIOR / BOUNDARY
    component: np.ndarray  # 1, 2, 3 on interior and boundary nodes, else 0
    H: np.ndarray

    @property
    def interior(self):
        return self.kind == INTERIOR

    @property
    def boundary(self):
        return self.kind == BOUNDARY


def build_mask(spec, grid, config):
    """Classify nodes; the two wells are the components of {H < 0} holding (-kappa, 0) and (kappa, 0)."""
    pts = grid.points()
    H = spec.H(pts)
    labels, _ = ndimage.label(H < 0)
    seeds = []
    for sx in (-spec.kappa, spec.kappa):
        i = int(round((sx - grid.bbox[0]) / grid.dx))
        j = int(round((0.0 - grid.bbox[2]) / grid.dy))
        seeds.append(labels[i, j])
    left = labels == seeds[0]
    right = labels == seeds[1]
    if seeds[0] == seeds[1] or 0 in seeds:
        # nodes straddling the saddle can join the lobes; fall back to the sign of x1
        left = (H < 0) & (pts[..., 0] < 0)
        right = (H < 0) & (pts[..., 0] > 0)
    comp = np.zeros(H.shape, dtype=np.int8)
    comp[left & (H > config.h1)] = 1
    comp[right & (H > config.h3)] = 3
    comp[(H >= 0) & (H < config.h2)] = 2
    kind = np.where(comp > 0, INTERIOR, EXTERIOR).astype(np.int8)
    # one-cell band of outside nodes touching the interior, tagged with the level they cross
    near = ndimage.binary_dilation(kind == INTERIOR, structure=np.ones((3, 3), bool)) & (kind != INTERIOR)
    kind[near] = BOUNDARY
    comp[near & (H >= config.h2)] = 2
    comp[near & (H < 0) & (pts[..., 0] < 0)] = 1
    comp[near & (H < 0) & (pts[..., 0] > 0)] = 3
    return DomainMask(kind, comp, H)


@dataclass
class Solution2D:
    epsilon: float
    u: np.ndarray           # (nx, ny); boundary and exterior nodes hold g = 0
    iterations: int
    final_update: float
    grid: Grid2D = field(repr=False, default=None)
    mask: DomainMask = field(repr=False, default=None)
    scheme: str = "flow"
    dt: float = 0.0
    history: list = field(repr=False, default_factory=list)
    sup_history: list = field(repr=False, default_factory=list)

    @property
    def sup_abs(self):
        return float(np.abs(self.u).max())

    def sample(self, pts):
        return bilinear(self.grid, self.u, pts)


def bilinear(grid, values, pts):
    pts = np.asarray(pts, dtype=float)
    fx = (pts[..., 0] - grid.bbox[0]) / grid.dx
    fy = (pts[..., 1] - grid.bbox[2]) / grid.dy
    i = np.clip(np.floor(fx).astype(int), 0, grid.nx - 2)
    j = np.clip(np.floor(fy).astype(int), 0, grid.ny - 2)
    tx, ty = fx - i, fy - j
    return ((1 - tx) * (1 - ty) * values[i, j] + tx * (1 - ty) * values[i + 1, j]
            + (1 - tx) * ty * values[i, j + 1] + tx * ty * values[i + 1, j + 1])


# --- numba geometry -------------------------------------------------------

@njit(cache=True)
def _dW(s, kappa, c):
    e = abs(s) - kappa
    out = -2.0 * s
    if e > 0:
        out += 4.0 * c * math.copysign(e * e * e, s)
    return out


@njit(cache=True)
def _d2W(s, kappa, c):
    e = abs(s) - kappa
    out = -2.0
    if e > 0:
        out += 12.0 * c * e * e
    return out


@njit(cache=True)
def _H(x, y, kappa, c):
    e = abs(x) - kappa
    w = -x * x
    if e > 0:
        w += c * e * e * e * e
    return y * y + w


@njit(cache=True)
def _cost(x, y, f0, amp, cx, cy, R):
    if R <= 0:
        return f0
    d = math.hypot(x - cx, y - cy)
    if d >= R:
        return f0
    cs = math.cos(0.5 * math.pi * d / R)
    return f0 * (1.0 + amp * cs * cs * cs * cs)


@njit(cache=True)
def _slack(x, y, kappa, c, h1, h2, h3):
    """Positive inside the open domain, negative outside."""
    h = _H(x, y, kappa, c)
    top = h2 - h
    if h >= 0:
        return top
    low = h - (h1 if x < 0 else h3)
    return min(top, low)


@njit(cache=True)
def _velocity(x, y, inv_eps, ca, sa, frame, kappa, c):
    gx = _dW(x, kappa, c)
    gy = 2.0 * y
    bx, by = gy, -gx
    if frame:
        g = math.hypot(gx, gy)
        if g > 1e-12:
            nx_, ny_ = gx / g, gy / g
            # tau = b / |b| = (ny, -nx)
            ax = ca * nx_ + sa * ny_
            ay = ca * ny_ - sa * nx_
        else:
            ax, ay = ca, sa
    else:
        ax, ay = ca, sa
    return bx * inv_eps + ax, by * inv_eps + ay


@njit(cache=True)
def _stencil(fx, fy, x0, y0, dx, dy, nx, ny, out_idx, out_w, k):
    gx = (fx - x0) / dx
    gy = (fy - y0) / dy
    i = int(math.floor(gx))
    j = int(math.floor(gy))
    i = min(max(i, 0), nx - 2)
    j = min(max(j, 0), ny - 2)
    tx = min(max(gx - i, 0.0), 1.0)
    ty = min(max(gy - j, 0.0), 1.0)
    out_idx[k, 0] = i * ny + j
    out_idx[k, 1] = (i + 1) * ny + j
    out_idx[k, 2] = i * ny + j + 1
    out_idx[k, 3] = (i + 1) * ny + j + 1
    out_w[k, 0] = (1 - tx) * (1 - ty)
    out_w[k, 1] = tx * (1 - ty)
    out_w[k, 2] = (1 - tx) * ty
    out_w[k, 3] = tx * ty


@njit(cache=True)
def _precompute(nodes, x0, y0, dx, dy, nx, ny, dirs, inv_eps, dt, lam, flow,
                kappa, c, h1, h2, h3, f0, amp, cx, cy, R, rot_cfl, disp_cells):
    nn = nodes.shape[0]
    nc = dirs.shape[0]
    cost = np.zeros((nn, nc))
    disc = np.zeros((nn, nc))
    idx = np.zeros((nn, nc, 4), dtype=np.int64)
    w = np.zeros((nn, nc, 4))
    for m in range(nn):
        p = nodes[m]
        xa = x0 + (p // ny) * dx
        ya = y0 + (p % ny) * dy
        for k in range(nc):
            ca, sa = dirs[k, 0], dirs[k, 1]
            if not flow:
                vx, vy = _velocity(xa, ya, inv_eps, ca, sa, False, kappa, c)
                fx, fy = xa + dt * vx, ya + dt * vy
                cost[m, k] = dt * _cost(xa, ya, f0, amp, cx, cy, R)
                disc[m, k] = math.exp(-lam * dt)
                if _slack(fx, fy, kappa, c, h1, h2, h3) <= 0:
                    for q in range(4):
                        idx[m, k, q] = -1
                else:
                    _stencil(fx, fy, x0, y0, dx, dy, nx, ny, idx[m], w[m], k)
                continue
            # controlled flow over dt with RK4 substeps
            t = 0.0
            x, y = xa, ya
            acc = 0.0
            fprev = _cost(x, y, f0, amp, cx, cy, R)
            sprev = _slack(x, y, kappa, c, h1, h2, h3)
            exited = False
            while t < dt * (1 - 1e-14):
                vx, vy = _velocity(x, y, inv_eps, ca, sa, True, kappa, c)
                rate = max(2.0, abs(_d2W(x, kappa, c))) * inv_eps + 1.0
                spd = math.hypot(vx, vy) + 1e-300
                h = min(dt - t, rot_cfl / rate, disp_cells * min(dx, dy) / spd)
                k1x, k1y = vx, vy
                k2x, k2y = _velocity(x + 0.5 * h * k1x, y + 0.5 * h * k1y, inv_eps, ca, sa, True, kappa, c)
                k3x, k3y = _velocity(x + 0.5 * h * k2x, y + 0.5 * h * k2y, inv_eps, ca, sa, True, kappa, c)
                k4x, k4y = _velocity(x + h * k3x, y + h * k3y, inv_eps, ca, sa, True, kappa, c)
                xn = x + h * (k1x + 2 * k2x + 2 * k3x + k4x) / 6.0
                yn = y + h * (k1y + 2 * k2y + 2 * k3y + k4y) / 6.0
                sn = _slack(xn, yn, kappa, c, h1, h2, h3)
                fn = _cost(xn, yn, f0, amp, cx, cy, R)
                if sn <= 0:
                    theta = sprev / (sprev - sn) if sprev > 0 else 0.0
                    te = t + theta * h
                    fe = fprev + theta * (fn - fprev)
                    acc += 0.5 * theta * h * (fprev * math.exp(-lam * t) + fe * math.exp(-lam * te))
                    t = te
                    exited = True
                    break
                acc += 0.5 * h * (fprev * math.exp(-lam * t) + fn * math.exp(-lam * (t + h)))
                t += h
                x, y, fprev, sprev = xn, yn, fn, sn
            cost[m, k] = acc
            disc[m, k] = math.exp(-lam * t)
            if exited:
                for q in range(4):
                    idx[m, k, q] = -1
            else:
                _stencil(x, y, x0, y0, dx, dy, nx, ny, idx[m], w[m], k)
    return cost, disc, idx, w


@njit(cache=True)
def _node_value(m, node, cost, disc, idx, w, u):
    best = 1e300
    for k in range(cost.shape[1]):
        if idx[m, k, 0] < 0:
            val = cost[m, k]
        else:
            other = 0.0
            selfw = 0.0
            for q in range(4):
                j = idx[m, k, q]
                if j == node:
                    selfw += w[m, k, q]
                else:
                    other += w[m, k, q] * u[j]
            val = (cost[m, k] + disc[m, k] * other) / (1.0 - disc[m, k] * selfw)
        if val < best:
            best = val
    return best


@njit(cache=True)
def _iterate(nodes, orders, cost, disc, idx, w, u, tol, max_iter, jacobi, history, sups):
    nn = nodes.shape[0]
    buf = u.copy()
    for it in range(max_iter):
        upd = 0.0
        if jacobi:
            for m in range(nn):
                buf[nodes[m]] = _node_value(m, nodes[m], cost, disc, idx, w, u)
            for m in range(nn):
                p = nodes[m]
                upd = max(upd, abs(buf[p] - u[p]))
                u[p] = buf[p]
        else:
            order = orders[it % orders.shape[0]]
            for r in range(nn):
                m = order[r]
                new = _node_value(m, nodes[m], cost, disc, idx, w, u)
                upd = max(upd, abs(new - u[nodes[m]]))
                u[nodes[m]] = new
        history[it] = upd
        sup = 0.0
        for m in range(nn):
            sup = max(sup, abs(u[nodes[m]]))
        sups[it] = sup
        if upd < tol:
            return it + 1, upd
    return max_iter, upd


@njit(cache=True)
def _lf_iterate(nodes, orders, nx, ny, x0, y0, dx, dy, inv_eps, lam, kappa, c,
                f0, amp, cx, cy, R, u, tol, max_iter, history, sups):
    nn = nodes.shape[0]
    upd = 0.0
    for it in range(max_iter):
        upd = 0.0
        order = orders[it % orders.shape[0]]
        for r in range(nn):
            p = nodes[order[r]]
            i, j = p // ny, p % ny
            x = x0 + i * dx
            y = y0 + j * dy
            uE, uW, uN, uS = u[p + ny], u[p - ny], u[p + 1], u[p - 1]
            px = (uE - uW) / (2 * dx)
            py = (uN - uS) / (2 * dy)
            bx, by = 2.0 * y, -_dW(x, kappa, c)
            ax_ = abs(bx) * inv_eps + 1.0
            ay_ = abs(by) * inv_eps + 1.0
            f = _cost(x, y, f0, amp, cx, cy, R)
            ham = -(bx * px + by * py) * inv_eps + math.hypot(px, py) - f
            new = (-ham + ax_ * (uE + uW) / (2 * dx) + ay_ * (uN + uS) / (2 * dy)) / (lam + ax_ / dx + ay_ / dy)
            upd = max(upd, abs(new - u[p]))
            u[p] = new
        history[it] = upd
        sup = 0.0
        for m in range(nn):
            sup = max(sup, abs(u[nodes[m]]))
        sups[it] = sup
        if upd < tol:
            return it + 1, upd
    return max_iter, upd


# --- public operations ------------------------------------------------------

def control_set(controls=16):
    """Unit directions at equal angles plus the zero control."""
    ang = 2 * np.pi * np.arange(controls) / controls
    return np.vstack([np.column_stack([np.cos(ang), np.sin(ang)]), [[0.0, 0.0]]])


def time_step(spec, grid, mask, epsilon, scheme):
    h = min(grid.dx, grid.dy)
    if scheme == "flow":
        return h
    pts = grid.points()[mask.interior]
    bmax = float(np.linalg.norm(spec.drift(pts), axis=-1).max())
    return h / (bmax / epsilon + 1.0)


def _orderings(grid, nodes):
    i, j = nodes // grid.ny, nodes % grid.ny
    keys = [(i, j), (-i, j), (-i, -j), (i, -j)]
    return np.array([np.lexsort((kj, ki)) for ki, kj in keys], dtype=np.int64)


@dataclass
class StepOperator:
    """Frozen one-step data; ``apply`` is one Jacobi sweep of the scheme."""

    nodes: np.ndarray
    cost: np.ndarray
    disc: np.ndarray
    idx: np.ndarray
    w: np.ndarray
    dt: float

    def apply(self, u_flat):
        out = u_flat.copy()
        for m, p in enumerate(self.nodes):
            foot = np.sum(self.w[m] * u_flat[np.maximum(self.idx[m], 0)], axis=1)
            vals = np.where(self.idx[m, :, 0] < 0, self.cost[m], self.cost[m] + self.disc[m] * foot)
            out[p] = vals.min()
        return out


def step_operator(spec, config, grid, mask, epsilon, controls=16, scheme="flow", dt=None,
                  rot_cfl=0.25, disp_cells=4.0):
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if controls < 8:
        raise ValueError("need at least 8 control directions")
    if scheme not in ("flow", "euler"):
        raise ValueError(f"no step operator for scheme {scheme!r}")
    dt = time_step(spec, grid, mask, epsilon, scheme) if dt is None else dt
    if dt < DT_FLOOR:
        raise EpsilonTooSmall(f"time step {dt:.3g} is below the floor {DT_FLOOR:g}")
    nodes = np.flatnonzero(mask.interior.ravel()).astype(np.int64)
    fp = config.f_params
    cost, disc, idx, w = _precompute(
        nodes, grid.bbox[0], grid.bbox[2], grid.dx, grid.dy, grid.nx, grid.ny, control_set(controls),
        1.0 / epsilon, dt, config.lam, scheme == "flow", spec.kappa, spec.blend_c,
        config.h1, config.h2, config.h3, fp.f0, fp.amplitude, fp.center[0], fp.center[1], fp.radius,
        rot_cfl, disp_cells)
    return StepOperator(nodes, cost, disc, idx, w, dt)


def solve(spec, config, grid, mask, epsilon, controls=16, tol=1e-9, max_iter=200000, mode="gauss_seidel",
          scheme="flow", init=None, dt=None, operator=None):
    """Fixed point of the scheme on the interior nodes; boundary and exterior nodes hold g = 0."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if mode not in ("gauss_seidel", "jacobi"):
        raise ValueError(f"unknown mode {mode!r}")
    u = np.zeros(grid.nx * grid.ny) if init is None else np.array(init, dtype=float).ravel().copy()
    u[~mask.interior.ravel()] = 0.0
    nodes = np.flatnonzero(mask.interior.ravel()).astype(np.int64)
    history = np.zeros(max_iter)
    sups = np.zeros(max_iter)
    if scheme == "lax_friedrichs":
        if not epsilon > 0:
            raise ValueError("epsilon must be positive")
        fp = config.f_params
        orders = _orderings(grid, nodes)
        iters, upd = _lf_iterate(nodes, orders, grid.nx, grid.ny, grid.bbox[0], grid.bbox[2], grid.dx, grid.dy,
                                 1.0 / epsilon, config.lam, spec.kappa, spec.blend_c, fp.f0, fp.amplitude,
                                 fp.center[0], fp.center[1], fp.radius, u, tol, max_iter, history, sups)
        step = 0.0
    else:
        op = operator or step_operator(spec, config, grid, mask, epsilon, controls, scheme, dt)
        orders = _orderings(grid, op.nodes)
        iters, upd = _iterate(op.nodes, orders, op.cost, op.disc, op.idx, op.w, u, tol, max_iter,
                              mode == "jacobi", history, sups)
        step = op.dt
    if iters >= max_iter and upd >= tol:
        raise NoConvergence(f"max update {upd:.3g} after {iters} iterations", upd)
    return Solution2D(float(epsilon), u.reshape(grid.nx, grid.ny), int(iters), float(upd), grid, mask, scheme,
                      float(step), history[:iters].tolist(), sups[:iters].tolist())


def loop_trace_values(sol, loop):
    vals = sol.sample(loop.points[:-1])
    return float(np.mean(vals)), float(np.std(vals))


def compare_to_graph(sol, gsol):
    """Sup over interior nodes of |u - u_i(H)| per branch, and overall."""
    mask = sol.mask
    errs = {}
    for i in (1, 2, 3):
        sel = mask.interior & (mask.component == i)
        if not sel.any():
            errs[i] = 0.0
            continue
        ref = gsol.u(i, mask.H[sel])
        errs[i] = float(np.abs(sol.u[sel] - ref).max())
    errs["overall"] = max(errs[i] for i in (1, 2, 3))
    return errs


def boundary_error(sol, gsol):
    """|g - d_i| on boundary nodes, with g = 0."""
    b = sol.mask.boundary
    out = 0.0
    for i in (1, 2, 3):
        sel = b & (sol.mask.component == i)
        if sel.any():
            out = max(out, float(np.abs(sol.u[sel] - gsol.d[i - 1]).max()))
    return out


def sup_bound(config, g_sup=0.0):
    """C v (M/lam) v (C/lam) with C = sup|g| v sup|G(., 0)| = sup|g| v max f."""
    C = max(g_sup, config.f_params.max_value)
    return max(C, config.M_bound / config.lam, C / config.lam)


def error_field(sol, gsol):
    out = np.full(sol.u.shape, np.nan)
    for i in (1, 2, 3):
        sel = sol.mask.interior & (sol.mask.component == i)
        out[sel] = np.abs(sol.u[sel] - gsol.u(i, sol.mask.H[sel]))
    return out


def write_nodal_csv(sol, path, config_hash=None):
    pts = sol.grid.points()
    sel = sol.mask.kind != EXTERIOR
    rows = zip(pts[..., 0][sel], pts[..., 1][sel], sol.mask.H[sel], sol.u[sel])
    write_csv(path, ["x1", "x2", "H", "u"], rows, config_hash)
    return path


def summary_record(sol, **extra):
    rec = {"epsilon": sol.epsilon, "iterations": sol.iterations, "final_update": sol.final_update,
           "sup_abs_u": sol.sup_abs, "scheme": sol.scheme, "dt": sol.dt}
    rec.update(extra)
    return rec


def append_jsonl(path, record):
    with open(path, "a") as fh:
        fh.write(json.dumps(record) + "\n")

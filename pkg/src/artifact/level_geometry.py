"""Periodic orbits of the Hamiltonian flow and controlled crossing times.

Loops are integrated with scipy's 8th-order Dormand-Prince stepper, and each
accepted step is projected back onto the level.  The period is the first
return to the transversal line through the seed point with the seed's
orientation; the crossing instant is located by root finding on the
stepper's dense output.  Stored samples are equally spaced in time, so
trapezoid averages of smooth integrands converge very fast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import DOP853, solve_ivp
from scipy.optimize import brentq

H_FLOOR = 1e-8
DEFAULT_TOL = 1e-10
DEFAULT_SAMPLES = 2048


class PeriodNotFound(RuntimeError):
    pass


class RootNotBracketed(ValueError):
    pass


class StalledTrajectory(RuntimeError):
    pass


@dataclass(frozen=True)
class LoopSample:
    branch: int
    h: float
    points: np.ndarray
    times: np.ndarray
    period: float
    length: float

    @property
    def mean_speed(self):
        return self.length / self.period


@dataclass(frozen=True)
class CrossingRecord:
    start: tuple
    epsilon: float
    mu: float
    sign: int
    exit_level: float
    elapsed: float


def saddle_passes(branch):
    """Number of times the loop c_i(h) passes the saddle for h near 0."""
    return 2 if branch == 2 else 1


def seed_point(spec, branch, h):
    """A point on c_branch(h): (0, sqrt h) on the outer ring, the inner root of W = h in a well."""
    if branch == 2:
        if not h > 0:
            raise RootNotBracketed(f"branch 2 needs h > 0, got {h}")
        return np.array([0.0, math.sqrt(h)])
    if branch not in (1, 3):
        raise ValueError(f"unknown branch {branch}")
    if not spec.h_min < h < 0:
        raise RootNotBracketed(f"well branches need h_min < h < 0, got {h}")
    s = brentq(lambda t: float(spec.W(t)) - h, 0.0, spec.s_star, xtol=1e-16, rtol=1e-15)
    return np.array([-s if branch == 1 else s, 0.0])


def _rhs(spec, sign=1.0):
    kappa, c = spec.kappa, spec.blend_c

    def fun(t, y):
        x1, x2 = y[0], y[1]
        e = abs(x1) - kappa
        dw = -2.0 * x1
        if e > 0:
            dw += 4.0 * c * math.copysign(e * e * e, x1)
        b1, b2 = sign * 2.0 * x2, -sign * dw
        return np.array([b1, b2, math.hypot(b1, b2)])

    return fun


def _project(spec, x, h, steps=2):
    """Newton steps along DH onto the level {H = h}."""
    kappa, c = spec.kappa, spec.blend_c
    x1, x2 = float(x[0]), float(x[1])
    for _ in range(steps):
        e = abs(x1) - kappa
        dw, w = -2.0 * x1, -x1 * x1
        if e > 0:
            dw += 4.0 * c * math.copysign(e * e * e, x1)
            w += c * e ** 4
        g2 = 2.0 * x2
        gg = dw * dw + g2 * g2
        if gg < 1e-300:
            break
        step = (x2 * x2 + w - h) / gg
        x1, x2 = x1 - step * dw, x2 - step * g2
    return np.array([x1, x2])


def _period_guess(branch, h, kappa):
    return saddle_passes(branch) * 0.5 * math.log(1.0 + 2.0 * kappa * kappa / abs(h)) + 3.0


def trace_loop(spec, branch, h, tol=DEFAULT_TOL, n_samples=DEFAULT_SAMPLES, start=None, h_floor=H_FLOOR):
    """Integrate one period of the free flow on c_branch(h).

    ``start`` overrides the default seed (it must lie on the same loop).
    """
    if abs(h) < h_floor:
        raise PeriodNotFound(f"|h| = {abs(h):.3g} is below the floor {h_floor:.3g}")
    key = None if start is None else tuple(float(v) for v in start)
    if int(branch) == 3:
        # W is even: c_3(h) is the mirror image of c_1(h), run backward in time
        mkey = None if key is None else (-key[0], key[1])
        if mkey is None and not spec.h_min < h < 0:
            raise RootNotBracketed(f"well branches need h_min < h < 0, got {h}")
        left = _trace_cached(spec, 1, float(h), float(tol), int(n_samples), mkey)
        pts = left.points[::-1] * np.array([-1.0, 1.0])
        pts.setflags(write=False)
        return LoopSample(3, left.h, pts, left.times, left.period, left.length)
    return _trace_cached(spec, int(branch), float(h), float(tol), int(n_samples), key)


@lru_cache(maxsize=4096)
def _trace_cached(spec, branch, h, tol, n_samples, start):
    x0 = seed_point(spec, branch, h) if start is None else _project(spec, np.array(start, dtype=float), h)
    fun = _rhs(spec)
    b0 = fun(0.0, np.array([x0[0], x0[1], 0.0]))[:2]
    speed0 = math.hypot(*b0)
    if speed0 == 0:
        raise PeriodNotFound("seed is an equilibrium")
    normal = b0 / speed0
    guess = _period_guess(branch, h, spec.kappa)
    solver = DOP853(fun, 0.0, np.array([x0[0], x0[1], 0.0]), t_bound=12.0 * guess, rtol=tol,
                  atol=tol * 1e-3, max_step=guess / 200.0)
    scale = max(1.0, float(np.abs(x0).max()))
    segments = []
    armed = False
    period = None
    while solver.status == "running":
        solver.step()
        if solver.status == "failed":
            break
        dense = solver.dense_output()
        segments.append(dense)
        # near the separatrix T ~ log(1/|h|) amplifies drift in H by 1/|h|; pull the state back to the level
        solver.y[:2] = _project(spec, solver.y[:2], h)
        solver.f = solver.fun(solver.t, solver.y)
        g = float((solver.y[:2] - x0) @ normal)
        if g < 0:
            armed = True
        elif armed:
            def section(t, dense=dense):
                return float((dense(t)[:2] - x0) @ normal)

            tc = brentq(section, dense.t_old, dense.t, xtol=1e-15, rtol=1e-15)
            if np.linalg.norm(dense(tc)[:2] - x0) < 1e-5 * scale:
                period = tc
                break
            armed = False
    if period is None:
        raise PeriodNotFound(f"no return to the section for branch {branch}, h={h:.3g}")

    times = np.linspace(0.0, period, n_samples + 1)
    states = _evaluate(segments, times)
    points = states[:, :2].copy()
    length = float(states[-1, 2])
    points.setflags(write=False)
    times.setflags(write=False)
    return LoopSample(branch, h, points, times, float(period), length)


def _evaluate(segments, times):
    ends = np.array([s.t for s in segments])
    idx = np.minimum(np.searchsorted(ends, times, side="left"), len(segments) - 1)
    out = np.empty((times.size, 3))
    for k in np.unique(idx):
        sel = idx == k
        out[sel] = segments[k](times[sel]).T
    return out


def loop_average(loop, integrand):
    """Time average over one period; ``integrand`` maps an (N, 2) array to N values."""
    vals = np.asarray(integrand(loop.points), dtype=float)
    # equally spaced periodic samples: the trapezoid rule is the mean over one copy
    return float(np.mean(vals[..., :-1], axis=-1)) if vals.ndim == 1 else np.mean(vals[..., :-1], axis=-1)


def rotated_loop(spec, loop, fraction, **kw):
    """Retrace the same loop from the point reached after ``fraction`` of a period."""
    k = int(round(fraction * (len(loop.times) - 1))) % (len(loop.times) - 1)
    return trace_loop(spec, loop.branch, loop.h, start=loop.points[k], n_samples=len(loop.times) - 1, **kw)


def saddle_transit_time(s, h):
    """Time for the quadratic saddle flow to go from the vertex of {|H| = |h|} to radius s."""
    a = abs(h)
    if a == 0 or a > s * s:
        raise ValueError(f"need 0 < |h| <= s^2, got h={h}, s={s}")
    q = s * s / a
    return 0.25 * math.log(q + math.sqrt(max(q * q - 1.0, 0.0)))


def _integrate_until(fun, y0, event, t_max, rtol=1e-11, atol=1e-13):
    sol = solve_ivp(fun, (0.0, t_max), y0, method="RK45", rtol=rtol, atol=atol, events=event, max_step=0.05)
    if sol.status != 1 or len(sol.t_events[0]) == 0:
        return None
    return sol.t_events[0][0], sol.y_events[0][0]


def controlled_crossing_time(spec, start, epsilon, mu, sign, target_level, grad_floor=1e-9, t_max=1e3):
    """Run X' = b/epsilon + sign * mu * DH/|DH| until H reaches ``target_level``."""
    sign = 1 if sign > 0 else -1
    inv_eps = 0.0 if math.isinf(epsilon) else 1.0 / epsilon
    start = np.asarray(start, dtype=float)

    def fun(t, y):
        g = spec.grad(y)
        n = math.hypot(g[0], g[1])
        if n == 0:
            return np.zeros(2)
        return np.array([2.0 * y[1] * inv_eps + sign * mu * g[0] / n, -g[0] * inv_eps + sign * mu * g[1] / n])

    def reach(t, y):
        return float(spec.H(y)) - target_level

    reach.terminal = True
    reach.direction = sign

    def stall(t, y):
        return float(np.linalg.norm(spec.grad(y))) - grad_floor

    stall.terminal = True
    stall.direction = -1
    if (float(spec.H(start)) - target_level) * sign >= 0:
        raise ValueError("target level is not ahead of the start in the drift direction")
    sol = solve_ivp(fun, (0.0, t_max), start, method="RK45", rtol=1e-10, atol=1e-12,
                    events=[reach, stall], max_step=0.05 * min(1.0, epsilon))
    if len(sol.t_events[1]):
        raise StalledTrajectory(f"|DH| fell below {grad_floor} at t={sol.t_events[1][0]:.4g}")
    if not len(sol.t_events[0]):
        raise StalledTrajectory("target level not reached within the time budget")
    return CrossingRecord(tuple(start), float(epsilon), float(mu), sign, float(target_level), float(sol.t_events[0][0]))


def free_transit_through_annulus(spec, start, r, t_max=500.0):
    """Time the free orbit through ``start`` spends outside B_r between consecutive visits."""
    start = np.asarray(start, dtype=float)
    if np.hypot(*start) <= r:
        raise ValueError("start must lie outside the closed ball")

    def hit(t, y):
        return y[0] * y[0] + y[1] * y[1] - r * r

    hit.terminal = True
    hit.direction = -1
    times = []
    for sgn in (1.0, -1.0):
        fun = _rhs(spec, sgn)
        res = _integrate_until(lambda t, y, fun=fun: fun(t, np.append(y, 0.0))[:2], start, hit, t_max)
        if res is None:
            raise PeriodNotFound("orbit did not reach the ball")
        times.append(res[0])
    return times[0] + times[1]


def arclength_in_ball(spec, branch, h, r):
    """Length of c_branch(h) inside the open ball of radius r < kappa, by ODE quadrature."""
    if r >= spec.kappa:
        raise ValueError("r must be below kappa")
    a = abs(h)
    if a >= r * r:
        return 0.0
    if branch == 2:
        vertices = [(0.0, math.sqrt(a)), (0.0, -math.sqrt(a))]
    else:
        vertices = [((-1.0 if branch == 1 else 1.0) * math.sqrt(a), 0.0)]

    def leave(t, y):
        return y[0] * y[0] + y[1] * y[1] - r * r

    leave.terminal = True
    leave.direction = 1
    total = 0.0
    for v in vertices:
        for sgn in (1.0, -1.0):
            res = _integrate_until(_rhs(spec, sgn), np.array([v[0], v[1], 0.0]), leave, 100.0, rtol=1e-12, atol=1e-15)
            if res is None:
                raise PeriodNotFound("arc did not leave the ball")
            total += res[1][2]
    return total


def period_offset(loop):
    """T_i(h) minus its leading logarithmic growth (passes/2) * log(1/|h|)."""
    return loop.period - 0.5 * saddle_passes(loop.branch) * math.log(1.0 / abs(loop.h))


def trace_levels(spec, branch, levels, **kw):
    return [trace_loop(spec, branch, h, **kw) for h in levels]

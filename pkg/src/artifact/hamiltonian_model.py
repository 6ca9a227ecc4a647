"""Double-well Hamiltonian, drift, running cost and structural audit.

H(x1, x2) = x2**2 + W(x1) with

    W(s) = -s**2                              for |s| <= kappa
    W(s) = -s**2 + blend_c * (|s| - kappa)**4 for |s| >  kappa

so H is exactly the saddle x2**2 - x1**2 on the closed ball of radius kappa,
has two nondegenerate minima at (+-s_star, 0) and grows like x1**4 far out.

The running cost Hamiltonian is G(x, p) = |p| - f(x) with f >= 0, whose
Lagrangian is f(x) on the unit ball of velocities and +infinity outside.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
from scipy.optimize import brentq

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class HamiltonianSpec:
    """Concrete double-well Hamiltonian.

    ``s_star`` and ``h_min`` are derived from ``kappa`` and ``blend_c`` in
    ``__post_init__``; pass only the first two.
    """

    kappa: float = 0.5
    blend_c: float = 8.0
    s_star: float = field(default=float("nan"), compare=False)
    h_min: float = field(default=float("nan"), compare=False)

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        s_star = _well_location(self.kappa, self.blend_c)
        object.__setattr__(self, "s_star", s_star)
        object.__setattr__(self, "h_min", float(self.W(s_star)) if math.isfinite(s_star) else -math.inf)

    # one-dimensional profile and its derivatives
    def W(self, s):
        s = np.asarray(s, dtype=float)
        excess = np.maximum(np.abs(s) - self.kappa, 0.0)
        return -s * s + self.blend_c * excess**4

    def dW(self, s):
        s = np.asarray(s, dtype=float)
        excess = np.maximum(np.abs(s) - self.kappa, 0.0)
        return -2.0 * s + 4.0 * self.blend_c * np.sign(s) * excess**3

    def d2W(self, s):
        s = np.asarray(s, dtype=float)
        excess = np.maximum(np.abs(s) - self.kappa, 0.0)
        return -2.0 + 12.0 * self.blend_c * excess**2

    # planar quantities; x has shape (..., 2)
    def H(self, x):
        x = np.asarray(x, dtype=float)
        return x[..., 1] ** 2 + self.W(x[..., 0])

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([self.dW(x[..., 0]), 2.0 * x[..., 1]], axis=-1)

    def drift(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([2.0 * x[..., 1], -self.dW(x[..., 0])], axis=-1)

    def zero_level_extent(self):
        """Positive root s0 of W(s) = 0, the half-width of {H <= 0}."""
        if self.blend_c <= 0:
            return math.inf
        hi = self.kappa + 1.0
        while self.W(hi) <= 0:
            hi *= 2.0
        return brentq(lambda s: float(self.W(s)), self.s_star, hi, xtol=1e-15)

    def level_extent(self, h):
        """Largest |x1| on the level set {H = h} (root of W(s) = h beyond s_star)."""
        if self.blend_c <= 0:
            return math.inf
        hi = self.kappa + 1.0
        while self.W(hi) <= h:
            hi *= 2.0
        return brentq(lambda s: float(self.W(s)) - h, self.s_star, hi, xtol=1e-15)


def _well_location(kappa, blend_c):
    """Root of W'(s) = -2 s + 4 c (s - kappa)**3 on (kappa, inf), by bisection."""
    if blend_c <= 0:
        return math.inf

    def dW(s):
        return -2.0 * s + 4.0 * blend_c * (s - kappa) ** 3

    lo, hi = kappa, kappa + 1.0
    while dW(hi) <= 0:
        hi = kappa + 2.0 * (hi - kappa)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if dW(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 4e-16 * hi:
            break
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class CostParams:
    """f(x) = f0 * (1 + amplitude * bump(x)), bump = cos**4 profile of radius ``radius``."""

    f0: float = 1.0
    amplitude: float = 1.5
    center: tuple = (-0.5, 0.3)
    radius: float = 0.45

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        d = np.hypot(x[..., 0] - self.center[0], x[..., 1] - self.center[1])
        if self.radius > 0:
            bump = np.where(d < self.radius, np.cos(0.5 * np.pi * d / self.radius) ** 4, 0.0)
        else:
            bump = np.zeros_like(d)
        return self.f0 * (1.0 + self.amplitude * bump)

    @property
    def max_value(self):
        return self.f0 * (1.0 + max(self.amplitude, 0.0)) if self.radius > 0 else self.f0

    @property
    def is_zero(self):
        return self.f0 == 0.0

    @property
    def is_symmetric(self):
        """True when f is invariant under x1 -> -x1."""
        return self.center[0] == 0.0 or self.amplitude == 0.0 or self.radius <= 0


@dataclass(frozen=True)
class ModelConfig:
    """Problem data: discount, boundary levels, running cost and coercivity slope."""

    lam: float = 1.0
    h1: float = float("nan")
    h2: float = 0.6
    h3: float = float("nan")
    f_params: CostParams = CostParams()
    nu: float = 1.0
    boundary: tuple = (0.0, 0.0, 0.0)

    @property
    def M_bound(self):
        return self.f_params.max_value

    def level(self, branch):
        return {1: self.h1, 2: self.h2, 3: self.h3}[branch]

    def f(self, x):
        return self.f_params(x)


def default_config(spec: HamiltonianSpec, **overrides) -> ModelConfig:
    depth = 0.6 * spec.h_min
    cfg = ModelConfig(h1=depth, h3=depth)
    return replace(cfg, **overrides) if overrides else cfg


def load_config(path) -> tuple[HamiltonianSpec, ModelConfig, dict]:
    """Read a TOML model file; returns (spec, config, raw table for other sections)."""
    with open(Path(path), "rb") as fh:
        raw = tomllib.load(fh)
    return config_from_dict(raw) + (raw,)


def config_from_dict(raw: dict[str, Any]) -> tuple[HamiltonianSpec, ModelConfig]:
    model = raw.get("model", {})
    spec = HamiltonianSpec(kappa=float(model.get("kappa", 0.5)), blend_c=float(model.get("blend_c", 8.0)))
    prob = raw.get("problem", {})
    ratio = float(prob.get("level_ratio", 0.6))
    depth = ratio * spec.h_min if math.isfinite(spec.h_min) else -1.0
    cost = raw.get("cost", {})
    f_params = CostParams(
        f0=float(cost.get("f0", CostParams.f0)),
        amplitude=float(cost.get("amplitude", CostParams.amplitude)),
        center=tuple(float(c) for c in cost.get("center", CostParams.center)),
        radius=float(cost.get("radius", CostParams.radius)),
    )
    cfg = ModelConfig(
        lam=float(prob.get("lambda", 1.0)),
        h1=float(prob.get("h1", depth)),
        h2=float(prob.get("h2", 0.6)),
        h3=float(prob.get("h3", depth)),
        f_params=f_params,
        nu=float(prob.get("nu", 1.0)),
        boundary=tuple(float(v) for v in prob.get("boundary", (0.0, 0.0, 0.0))),
    )
    return spec, cfg


# Operations on points; all accept arrays of shape (..., 2).

def eval_H(spec, x):
    return spec.H(x)


def grad_H(spec, x):
    return spec.grad(x)


def drift_b(spec, x):
    return spec.drift(x)


def eval_G(config, x, p):
    p = np.asarray(p, dtype=float)
    return np.hypot(p[..., 0], p[..., 1]) - config.f(x)


class _InfiniteCost:
    """Tagged stand-in for an infinite Lagrangian value."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFINITE_COST"

    def __float__(self):
        raise TypeError("infinite Lagrangian cost has no float value")


INFINITE_COST = _InfiniteCost()


def eval_lagrangian(config, x, xi):
    """Convex dual of G(x, .) at velocity xi; INFINITE_COST when |xi| > nu."""
    xi = np.asarray(xi, dtype=float)
    if math.hypot(xi[0], xi[1]) > config.nu:
        return INFINITE_COST
    return float(config.f(np.asarray(x, dtype=float)))


def region_index(spec, config, x):
    """0 outside the domain, else 1/2/3 for the left well, outer ring, right well."""
    x = np.asarray(x, dtype=float)
    h = spec.H(x)
    out = np.zeros(h.shape, dtype=np.int64)
    out[(h >= 0) & (h < config.h2)] = 2
    out[(h < 0) & (x[..., 0] < 0) & (h > config.h1)] = 1
    out[(h < 0) & (x[..., 0] > 0) & (h > config.h3)] = 3
    return out


def bounding_box(spec, config, margin=0.05):
    """Rectangle containing the closed domain {H <= h2}."""
    sx = spec.level_extent(config.h2)
    sy = math.sqrt(config.h2 - spec.h_min)
    return (-sx - margin, sx + margin, -sy - margin, sy + margin)


def measure_c0(spec, config, n=801, refine=201):
    """min over the closed domain of |DH| / sqrt(|H|), by a grid search plus local refinement."""
    x0, x1, y0, y1 = bounding_box(spec, config, margin=0.0)

    def ratio_on(xs, ys):
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        pts = np.stack([X, Y], axis=-1)
        h = spec.H(pts)
        g = np.linalg.norm(spec.grad(pts), axis=-1)
        inside = _closed_region(spec, config, pts, h)
        inside &= np.abs(h) > 1e-12
        r = np.full(h.shape, np.inf)
        r[inside] = g[inside] / np.sqrt(np.abs(h[inside]))
        k = np.unravel_index(np.argmin(r), r.shape)
        return r[k], pts[k]

    xs, ys = np.linspace(x0, x1, n), np.linspace(y0, y1, n)
    best, where = ratio_on(xs, ys)
    hx, hy = 2 * (xs[1] - xs[0]), 2 * (ys[1] - ys[0])
    fine, where_f = ratio_on(
        np.linspace(where[0] - hx, where[0] + hx, refine), np.linspace(where[1] - hy, where[1] + hy, refine)
    )
    if fine < best:
        best, where = fine, where_f
    return float(best), np.asarray(where)


def _closed_region(spec, config, pts, h=None):
    h = spec.H(pts) if h is None else h
    left = (pts[..., 0] <= 0) & (h >= config.h1)
    right = (pts[..., 0] >= 0) & (h >= config.h3)
    return (h <= config.h2) & ((h >= 0) | left | right)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    witness: Any = None


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)
    c0: float = float("nan")

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def add(self, name, passed, detail="", witness=None):
        self.checks.append(CheckResult(name, bool(passed), detail, witness))

    def to_text(self):
        lines = []
        for c in self.checks:
            tag = "PASS" if c.passed else "FAIL"
            line = f"[{tag}] {c.name}"
            if c.detail:
                line += f": {c.detail}"
            if not c.passed and c.witness is not None:
                line += f" (witness {c.witness})"
            lines.append(line)
        lines.append(f"c0 = {self.c0:.6g}")
        lines.append("overall: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


def validate_assumptions(spec, config, sample_density=201, seed=0) -> ValidationReport:
    """Numerical audit of the structural assumptions on H, G and the boundary levels."""
    rep = ValidationReport()
    rng = np.random.default_rng(seed)
    kappa = spec.kappa

    # coercivity first; most other checks need bounded level sets
    coercive = spec.blend_c > 0 and math.isfinite(spec.h_min)
    witness = None
    if coercive:
        R = 2.0 * spec.zero_level_extent() + 1.0
        angles = np.linspace(0, 2 * np.pi, 73)
        dirs = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
        radii = np.linspace(R, 4 * R, 50)
        vals = spec.H(radii[None, :, None] * dirs[:, None, :])
        bad = np.diff(vals, axis=1) < 0
        if bad.any():
            coercive = False
            k = np.argwhere(bad)[0]
            witness = tuple(radii[k[1]] * dirs[k[0]])
    else:
        witness = (1.0e3, 0.0)
    rep.add("coercivity", coercive, "H nondecreasing along rays beyond the validation radius", witness)
    if not coercive:
        return rep

    # exact saddle on the closed ball
    r = kappa * np.sqrt(rng.random(sample_density * 10))
    th = 2 * np.pi * rng.random(r.size)
    ball = np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)
    err = np.abs(spec.H(ball) - (ball[:, 1] ** 2 - ball[:, 0] ** 2))
    rep.add("quadratic on ball", err.max() <= 1e-15, f"max deviation {err.max():.2e}", ball[np.argmax(err)])
    gerr = np.abs(np.linalg.norm(spec.grad(ball), axis=-1) - 2 * np.linalg.norm(ball, axis=-1))
    rep.add("|DH| = 2|x| on ball", gerr.max() <= 1e-14, f"max deviation {gerr.max():.2e}")

    # critical points: zeros of W' (DH = 0 forces x2 = 0)
    s0 = spec.zero_level_extent()
    ss = np.linspace(-2 * s0, 2 * s0, 40001)
    dw = spec.dW(ss)
    sign_changes = np.count_nonzero(np.signbit(dw[:-1]) != np.signbit(dw[1:]))
    # the origin is an exact zero of W', counted once by the sign flip there
    ok = sign_changes == 3 and spec.d2W(0.0) != 0 and spec.d2W(spec.s_star) > 0
    rep.add(
        "three nondegenerate critical points",
        ok,
        f"sign changes of W' = {sign_changes}, s* = {spec.s_star:.12g}, h_min = {spec.h_min:.12g}",
    )

    x0, x1, y0, y1 = bounding_box(spec, config, margin=0.0)
    xs, ys = np.linspace(x0, x1, sample_density), np.linspace(y0, y1, sample_density)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
    crit = np.array([[0.0, 0.0], [-spec.s_star, 0.0], [spec.s_star, 0.0]])
    dist = np.min(np.linalg.norm(pts[:, None, :] - crit[None], axis=-1), axis=1)
    far = dist > 1e-6
    gn = np.linalg.norm(spec.grad(pts[far]), axis=-1)
    rep.add("no other critical points", gn.min() > 0, f"min |DH| away from critical points {gn.min():.3e}")

    # drift orthogonality
    dots = np.abs(np.sum(spec.drift(pts) * spec.grad(pts), axis=-1))
    rep.add("b . DH = 0", dots.max() <= 1e-12, f"max {dots.max():.2e}", pts[np.argmax(dots)])

    # boundary levels
    ok = spec.h_min < config.h1 < 0 and spec.h_min < config.h3 < 0 and config.h2 > 0
    rep.add("level ordering", ok, f"h_min={spec.h_min:.6g}, h=({config.h1:.6g}, {config.h2:.6g}, {config.h3:.6g})")

    # closed ball of radius kappa inside the domain
    th = np.linspace(0, 2 * np.pi, 721)
    circle = kappa * np.stack([np.cos(th), np.sin(th)], axis=-1)
    inside = np.asarray(region_index(spec, config, circle) > 0) | (np.abs(spec.H(circle)) == 0)
    rep.add(
        "closed ball inside domain",
        bool(inside.all()),
        f"|H| <= kappa^2 = {kappa**2:.4g} must sit strictly inside ({max(config.h1, config.h3):.4g}, {config.h2:.4g})",
        None if inside.all() else tuple(circle[np.argmin(inside)]),
    )

    # cost
    fv = config.f(pts)
    rep.add("f >= 0", fv.min() >= 0, f"min f = {fv.min():.3g}", pts[np.argmin(fv)])
    rep.add("nu > 0", config.nu > 0, f"nu = {config.nu}")
    rep.add("lambda > 0", config.lam > 0, f"lambda = {config.lam}")

    p = rng.normal(size=(500, 2)) * 3
    pp = rng.normal(size=(500, 2)) * 3
    xx = pts[rng.integers(0, len(pts), 500)]
    mid = eval_G(config, xx, 0.5 * (p + pp))
    avg = 0.5 * (eval_G(config, xx, p) + eval_G(config, xx, pp))
    gap = (mid - avg).max()
    rep.add("G convex in p", gap <= 1e-12, f"max midpoint excess {gap:.2e}")
    lower = eval_G(config, xx, p) - (config.nu * np.linalg.norm(p, axis=-1) - config.M_bound)
    rep.add("G coercive (nu |p| - M)", lower.min() >= -1e-12, f"min margin {lower.min():.3g}")

    c0, where = measure_c0(spec, config)
    rep.c0 = c0
    rep.add("|DH| >= c0 |H|^(1/2)", c0 > 0, f"c0 = {c0:.6g} attained near {np.round(where, 6).tolist()}")
    return rep

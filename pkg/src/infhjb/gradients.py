"""Numerical nonsmooth analysis of scalar fields on (t, x).

A scalar field is any object with ``field(t, x) -> values`` for ``t`` (Q,) and
``x`` (Q, n) and a ``domain`` attribute ``((t_lo, t_hi), lo, hi)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import OutOfDomainError
from .expr import Expr, parse_expr
from .report import CheckReport

DEFAULT_TOL = 1e-6


# ---------------------------------------------------------------------- fields


@dataclass(frozen=True)
class ExprField:
    """Closed-form field from an expression in ``t`` and ``x1..xn``."""

    expr: Expr
    n: int
    domain: tuple = ((0.0, math.inf), (-math.inf,), (math.inf,))

    @classmethod
    def parse(cls, source, n, domain=None):
        if domain is None:
            domain = ((0.0, math.inf), (-math.inf,) * n, (math.inf,) * n)
        return cls(parse_expr(source, n, 0), n, _norm_domain(domain))

    def __call__(self, t, x):
        t, x = _as_query(t, x)
        return np.broadcast_to(self.expr.evaluate(t, x), t.shape).astype(float)


@dataclass(frozen=True)
class FunctionField:
    """Field backed by a vectorised callable ``fn(t, x)``."""

    fn: Callable
    n: int
    domain: tuple = ((0.0, math.inf), (-math.inf,), (math.inf,))
    label: str = "function"

    def __post_init__(self):
        object.__setattr__(self, "domain", _norm_domain(self.domain, self.n))

    def __call__(self, t, x):
        t, x = _as_query(t, x)
        return np.broadcast_to(np.asarray(self.fn(t, x), dtype=float), t.shape)


@dataclass(frozen=True)
class NegatedField:
    base: object

    @property
    def domain(self):
        return self.base.domain

    @property
    def n(self):
        return len(self.base.domain[1])

    def __call__(self, t, x):
        return -np.asarray(self.base(t, x), dtype=float)


def _norm_domain(domain, n=None):
    (t0, t1), lo, hi = domain
    lo = tuple(float(v) for v in np.atleast_1d(lo))
    hi = tuple(float(v) for v in np.atleast_1d(hi))
    if n is not None and len(lo) == 1 and n > 1:
        lo, hi = lo * n, hi * n
    return (float(t0), float(t1)), lo, hi


def _as_query(t, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), (len(x),))
    return t, x


def field_dim(phi):
    return len(phi.domain[1])


def evaluate(phi, t, x):
    """Evaluate ``phi`` after checking that every query lies in its declared domain."""
    t, x = _as_query(t, x)
    (t0, t1), lo, hi = phi.domain
    eps = 1e-12
    bad = (t < t0 - eps) | (t > t1 + eps) | np.any(x < np.array(lo) - eps, axis=1) | np.any(x > np.array(hi) + eps, axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise OutOfDomainError(f"probe (t={t[i]!r}, x={x[i].tolist()}) is outside the field's domain")
    return np.asarray(phi(t, x), dtype=float)


# -------------------------------------------------------------- Dini derivatives


@dataclass(frozen=True)
class RadiusSchedule:
    """Decreasing probe radii; ``perturb`` toggles the joint perturbation of the direction."""

    radii: tuple = tuple(2.0 ** -j for j in range(3, 13))
    perturb: bool = True

    def __post_init__(self):
        r = tuple(float(v) for v in self.radii)
        if len(r) < 3:
            raise ValueError("a radius schedule needs at least 3 radii")
        if any(v <= 0 for v in r) or any(b >= a for a, b in zip(r, r[1:])):
            raise ValueError("radii must be positive and strictly decreasing")
        object.__setattr__(self, "radii", r)

    @classmethod
    def geometric(cls, first, last):
        return cls(tuple(2.0 ** -j for j in range(first, last + 1)))

    @property
    def plateau(self):
        """Indices of the last third of the schedule (never the first radius)."""
        J = len(self.radii)
        return range(max(1, J - max(1, J // 3)), J)


def _perturbations(n):
    """Unit offsets of the direction's state part: none, +-axes, and the diagonals."""
    rows = [np.zeros(n)]
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        rows += [e, -e]
    if n > 1:
        for signs in itertools.product((-1.0, 1.0), repeat=n):
            rows.append(np.array(signs) / math.sqrt(n))
    return np.array(rows)


@dataclass(frozen=True)
class DiniEstimate:
    lower: float
    upper: float
    spread: float  # plateau variation of the reported bounds
    stable: bool


def dini_estimates(phi, point, directions, sched=RadiusSchedule(), stab_tol=1e-3):
    """Lower and upper Dini derivatives of ``phi`` at ``point`` for each direction (D, 1+n).

    Per radius r the quotient [phi(t + r a, x + r w) - phi(t, x)] / r is taken at w = xi and at
    w = xi + r e for the perturbation offsets e. The value at w = xi and the one-sided widths
    are Richardson-extrapolated between consecutive radii before the plateau min/max is taken.
    """
    t, x = float(point[0]), np.asarray(point[1], dtype=float)
    n = len(x)
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    radii = np.array(sched.radii)
    offs = _perturbations(n) if sched.perturb else np.zeros((1, n))
    D, J, P = len(dirs), len(radii), len(offs)
    # probe layout (D, J, P)
    r = radii[None, :, None]
    a = dirs[:, None, None, 0]
    w = dirs[:, None, None, 1:] + r[..., None] * offs[None, None]
    pt = t + r * a + np.zeros((D, J, P))
    px = x + r[..., None] * w
    base = float(evaluate(phi, np.array([t]), x[None])[0])
    vals = evaluate(phi, pt.ravel(), px.reshape(-1, n)).reshape(D, J, P)
    q = (vals - base) / r
    q0 = q[:, :, 0]
    lo = q0 - q.min(axis=2)
    hi = q.max(axis=2) - q0
    c = 2 * q0[:, 1:] - q0[:, :-1]
    lo_x = np.maximum(0.0, 2 * lo[:, 1:] - lo[:, :-1])
    hi_x = np.maximum(0.0, 2 * hi[:, 1:] - hi[:, :-1])
    lower_j, upper_j = c - lo_x, c + hi_x
    idx = np.array(sched.plateau) - 1
    L, U = lower_j[:, idx], upper_j[:, idx]
    lower, upper = L.min(axis=1), U.max(axis=1)
    spread = np.maximum(L.max(axis=1) - lower, upper - U.min(axis=1))
    stable = spread <= stab_tol * (1 + np.maximum(np.abs(lower), np.abs(upper)))
    return [DiniEstimate(float(a_), float(b_), float(s_), bool(k_))
            for a_, b_, s_, k_ in zip(lower, upper, spread, stable)]


def dini_lower(phi, point, direction, sched=RadiusSchedule()):
    """Lower Dini derivative along (alpha, xi); returns ``(value, stable)``."""
    est = dini_estimates(phi, point, [direction], sched)[0]
    return est.lower, est.stable


def dini_upper(phi, point, direction, sched=RadiusSchedule()):
    est = dini_estimates(phi, point, [direction], sched)[0]
    return est.upper, est.stable


def probe_directions(n, count=None, seed=0):
    """+-axes of (t, x) space followed by seeded random unit vectors."""
    d = n + 1
    count = 2 * d + 4 if count is None else count
    if count < 2 * d:
        raise ValueError(f"need at least {2 * d} directions")
    eye = np.eye(d)
    axes = np.vstack([eye, -eye]) + 0.0  # avoid negative zeros
    rng = np.random.default_rng(seed)
    extra = rng.normal(size=(count - 2 * d, d))
    extra /= np.linalg.norm(extra, axis=1, keepdims=True)
    return np.vstack([axes, extra])


@dataclass(frozen=True)
class DiniProfile:
    """Directional Dini bounds at one point, reusable across many candidates."""

    point: tuple
    directions: np.ndarray
    estimates: tuple

    @classmethod
    def build(cls, phi, point, sched=RadiusSchedule(), directions=None, seed=0):
        t, x = float(point[0]), np.asarray(point[1], dtype=float)
        dirs = probe_directions(len(x), directions, seed) if directions is None or np.isscalar(directions) \
            else np.asarray(directions, dtype=float)
        return cls((t, tuple(x.tolist())), dirs, tuple(dini_estimates(phi, (t, x), dirs, sched)))

    def negated(self):
        flip = tuple(DiniEstimate(-e.upper, -e.lower, e.spread, e.stable) for e in self.estimates)
        return DiniProfile(self.point, self.directions, flip)


def _candidate(c):
    c = np.asarray(c, dtype=float).ravel()
    return c


def dini_subgradient_test(phi, point, candidate, sched=RadiusSchedule(), directions=None,
                          tol=DEFAULT_TOL, seed=0, profile=None):
    """Evidence that (alpha, xi) is a Dini sub-gradient: D^-phi(d) >= <(alpha, xi), d> on every probed d.

    A failure carries the violating direction as witness.
    """
    if profile is None:
        profile = DiniProfile.build(phi, point, sched, directions, seed)
    return _sub_report("dini-subgradient", profile, _candidate(candidate), tol)


def _sub_report(name, profile, c, tol):
    dots = profile.directions @ c
    lower = np.array([e.lower for e in profile.estimates])
    spread = np.array([e.spread for e in profile.estimates])
    margin = lower - dots + tol + spread
    i = int(np.argmin(margin))
    return CheckReport(
        test=name,
        passed=bool(margin[i] >= 0),
        worst_margin=float(lower[i] - dots[i]),
        point={"t": profile.point[0], "x": list(profile.point[1])},
        candidate=c.tolist(),
        witness=profile.directions[i].tolist(),
        stability=bool(all(e.stable for e in profile.estimates)),
        budget={"tol": tol, "spread": float(spread[i])},
    )


def dini_supergradient_test(phi, point, candidate, sched=RadiusSchedule(), directions=None,
                            tol=DEFAULT_TOL, seed=0, profile=None):
    """Super-gradient test, computed as the sub-gradient test of -phi at -candidate."""
    neg = None if profile is None else profile.negated()
    rep = dini_subgradient_test(NegatedField(phi), point, -_candidate(candidate), sched, directions,
                                tol, seed, neg)
    details = dict(rep.details, reduction="sub-gradient test of the negated field at the negated candidate")
    return CheckReport(test="dini-supergradient", passed=rep.passed, worst_margin=rep.worst_margin,
                       point=rep.point, candidate=rep.candidate, witness=rep.witness,
                       stability=rep.stability, budget=rep.budget, details=details)


# -------------------------------------------------------------------- proximal


def proximal_probes(n, rho, count=64, seed=0):
    """Offsets in (t, x) space: rays along +-axes and seeded directions at radii rho 2^-k."""
    dirs = probe_directions(n, 2 * (n + 1) + 8, seed)
    levels = max(1, count // len(dirs))
    radii = rho * 2.0 ** -np.arange(levels)
    return (radii[:, None, None] * dirs[None]).reshape(-1, n + 1)


def proximal_subgradient_test(phi, point, candidate, sigma, rho, probes=64, seed=0, atol=1e-10):
    """phi(s, y) >= phi(t, x) + alpha (s - t) + <xi, y - x> - sigma (|s-t|^2 + |y-x|^2) on probes.

    Probes outside the field's domain are skipped.
    """
    if not (sigma >= 0 and rho > 0):
        raise ValueError("need sigma >= 0 and rho > 0")
    t, x = float(point[0]), np.asarray(point[1], dtype=float)
    n = len(x)
    c = _candidate(candidate)
    off = proximal_probes(n, rho, probes, seed)
    s, y = t + off[:, 0], x + off[:, 1:]
    (t0, t1), lo, hi = phi.domain
    keep = (s >= t0) & (s <= t1) & np.all(y >= np.array(lo), axis=1) & np.all(y <= np.array(hi), axis=1)
    off, s, y = off[keep], s[keep], y[keep]
    base = float(evaluate(phi, np.array([t]), x[None])[0])
    vals = evaluate(phi, s, y)
    slack = vals - base - off @ c + sigma * np.sum(off**2, axis=1)
    i = int(np.argmin(slack)) if len(slack) else -1
    worst = float(slack[i]) if len(slack) else math.inf
    return CheckReport(
        test="proximal-subgradient",
        passed=bool(worst >= -atol),
        worst_margin=worst,
        point={"t": t, "x": x.tolist()},
        candidate=c.tolist(),
        witness=None if i < 0 else off[i].tolist(),
        budget={"atol": atol},
        details={"sigma": sigma, "rho": rho, "probes_used": int(len(slack))},
    )


def proximal_supergradient_test(phi, point, candidate, sigma, rho, probes=64, seed=0, atol=1e-10):
    rep = proximal_subgradient_test(NegatedField(phi), point, -_candidate(candidate), sigma, rho, probes,
                                    seed, atol)
    return CheckReport(test="proximal-supergradient", passed=rep.passed, worst_margin=rep.worst_margin,
                       point=rep.point, candidate=rep.candidate, witness=rep.witness,
                       budget=rep.budget, details=rep.details)


# ------------------------------------------------------------------- viscosity


def _mesh_axes(region, mesh):
    (t0, t1), box = region
    axes = [np.array([float(t0)]) if t0 == t1 else np.linspace(t0, t1, mesh)]
    for lo, hi in box:
        axes.append(np.array([float(lo)]) if lo == hi else np.linspace(lo, hi, mesh))
    return axes


def viscosity_extremum_scan(v, phi, region, mesh=21):
    """Mesh nodes where v - phi has a strict local extremum against all mesh neighbours.

    ``phi`` is an Expr over (t, x) or a scalar field. Degenerate axes (lo == hi) are held
    fixed. Returns ``[((t, x), "local-max" | "local-min"), ...]``.
    """
    axes = _mesh_axes(region, mesh)
    shape = tuple(len(a) for a in axes)
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    t, x = grid[:, 0], grid[:, 1:]
    pv = phi.evaluate(t, x) if isinstance(phi, Expr) else evaluate(phi, t, x)
    diff = (evaluate(v, t, x) - np.broadcast_to(pv, t.shape)).reshape(shape)
    live = [k for k, size in enumerate(shape) if size > 1]
    if not live:
        return []
    inner = tuple(slice(1, -1) if s > 1 else slice(None) for s in shape)
    core = diff[inner]
    is_max = np.ones(core.shape, dtype=bool)
    is_min = np.ones(core.shape, dtype=bool)
    for step in itertools.product((-1, 0, 1), repeat=len(live)):
        if not any(step):
            continue
        sl = [slice(None)] * len(shape)
        for k, s in zip(live, step):
            sl[k] = slice(1 + s, shape[k] - 1 + s)
        nb = diff[tuple(sl)]
        is_max &= core > nb
        is_min &= core < nb
    found = []
    idx_grid = np.arange(grid.shape[0]).reshape(shape)[inner]
    for mask, kind in ((is_max, "local-max"), (is_min, "local-min")):
        for flat in idx_grid[mask].ravel():
            found.append(((float(t[flat]), tuple(x[flat].tolist())), kind))
    found.sort(key=lambda item: (item[0][0], item[0][1], item[1]))
    return found


def quadratic_test_function(point, candidate, value, curvature):
    """phi(s, y) = value + <candidate, (s, y) - point> + curvature (|s-t|^2 + |y-x|^2)."""
    t, x = float(point[0]), np.asarray(point[1], dtype=float)
    c = _candidate(candidate)

    def fn(s, y):
        ds, dy = s - t, y - x
        return value + c[0] * ds + dy @ c[1:] + curvature * (ds**2 + np.sum(dy**2, axis=1))

    return FunctionField(fn, len(x), ((-math.inf, math.inf), (-math.inf,) * len(x), (math.inf,) * len(x)),
                         label="quadratic")


def viscosity_touch(v, point, candidate, sigma, rho, mesh=5, side="above"):
    """Whether the quadratic with slope ``candidate`` and curvature 2 sigma touches v at ``point``.

    ``side="above"`` tests for a strict local max of v - phi at the centre node (phi touches
    from above, curvature +2 sigma); ``"below"`` tests a strict local min with curvature -2 sigma.
    """
    t, x = float(point[0]), np.asarray(point[1], dtype=float)
    (t0, t1), lo, hi = v.domain
    h = rho / ((mesh - 1) // 2)
    half = (mesh - 1) // 2
    ts = t + h * np.arange(-half, half + 1)
    ts = ts[(ts >= t0) & (ts <= t1)]
    axes = [ts]
    for i in range(len(x)):
        xs = x[i] + h * np.arange(-half, half + 1)
        axes.append(xs[(xs >= lo[i]) & (xs <= hi[i])])
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    curv = 2 * sigma if side == "above" else -2 * sigma
    base = float(evaluate(v, np.array([t]), x[None])[0])
    phi = quadratic_test_function(point, candidate, base, curv)
    diff = evaluate(v, grid[:, 0], grid[:, 1:]) - phi(grid[:, 0], grid[:, 1:])
    centre = np.all(np.isclose(grid, np.concatenate([[t], x]), rtol=0, atol=1e-14), axis=1)
    others = diff[~centre]
    if side == "above":
        return bool(np.all(others < 0.0))
    return bool(np.all(others > 0.0))

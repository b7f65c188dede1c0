"""Backward semi-Lagrangian dynamic programming for the truncated value function."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import OutOfDomainError, SolveError
from .interp import METHODS, interpolate
from .problem import horizon_for_target, problem_hash, tail_bound
from .report import dumps
from .trajectory import ControlSignal, _rk4_segment, certificate_from, integrate

COST_RULES = ("exp-trapezoid", "rectangle")


@dataclass(frozen=True)
class Grid:
    """State box with per-axis node counts and a uniform time grid on ``[0, T]``."""

    lo: tuple
    hi: tuple
    nodes: tuple
    dt: float
    T: float
    interpolation: str = "multilinear"

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        nodes = tuple(int(k) for k in np.atleast_1d(self.nodes))
        if len(nodes) == 1 and len(lo) > 1:
            nodes = nodes * len(lo)
        if not (len(lo) == len(hi) == len(nodes)):
            raise ValueError("box bounds and node counts disagree in dimension")
        if any(k < 2 for k in nodes):
            raise ValueError("need at least 2 nodes per axis")
        if any(not a < b for a, b in zip(lo, hi)):
            raise ValueError("each box axis needs lo < hi")
        if not (self.dt > 0 and self.T > 0):
            raise ValueError("dt and T must be positive")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-6 * max(1.0, steps):
            raise ValueError(f"T={self.T} is not a multiple of dt={self.dt}")
        if self.interpolation not in METHODS:
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "T", float(round(steps) * self.dt))

    @property
    def n(self):
        return len(self.nodes)

    @property
    def steps(self):
        return int(round(self.T / self.dt))

    @property
    def times(self):
        return np.arange(self.steps + 1) * self.dt

    @property
    def spacing(self):
        return (np.array(self.hi) - np.array(self.lo)) / (np.array(self.nodes) - 1)

    def axes(self):
        return [np.linspace(a, b, k) for a, b, k in zip(self.lo, self.hi, self.nodes)]

    def node_points(self):
        """All nodes as (N, n), row-major with the last axis fastest."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def to_dict(self):
        return {"lo": list(self.lo), "hi": list(self.hi), "nodes": list(self.nodes),
                "dt": self.dt, "T": self.T, "interpolation": self.interpolation}


def make_grid(p, box, nodes, dt, eps=None, horizon=None, interpolation="multilinear"):
    """Grid whose horizon comes either from an explicit ``horizon`` or from an error target ``eps``."""
    if (eps is None) == (horizon is None):
        raise ValueError("give exactly one of eps and horizon")
    T = horizon_for_target(p, eps, dt) if eps is not None else horizon
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    return Grid(tuple(box[:, 0]), tuple(box[:, 1]), tuple(np.atleast_1d(nodes)), dt, T, interpolation)


def _step_weights(delta, t, dt):
    """Exact weights for integrating e^{-delta s} times the linear interpolant of l over one step."""
    c = delta * dt
    if c < 1e-6:
        a = dt * (0.5 - c / 6 + c * c / 24)
        b = dt * (0.5 - c / 3 + c * c / 8)
    else:
        e = math.exp(-c)
        a = dt * (c - 1 + e) / (c * c)
        b = dt * (1 - e * (1 + c)) / (c * c)
    w = math.exp(-delta * t)
    return w * a, w * b


def _step_costs(p, t, dt, x, us, foot, rule):
    """One-step discounted cost for nodes ``x`` (N, 1, n) under samples ``us`` (S, m)."""
    l0 = np.broadcast_to(p.eval_l(t, x, us), foot.shape[:-1])
    if rule == "rectangle":
        return dt * math.exp(-p.delta * t) * l0
    a, b = _step_weights(p.delta, t, dt)
    return a * l0 + b * p.eval_l(t + dt, foot, us)


@dataclass(frozen=True)
class ValueField:
    """Node values of the truncated value function, interpolated in state and linear in time."""

    grid: Grid
    values: np.ndarray  # (K+1, *nodes)
    policy: np.ndarray  # (K+1, *nodes) control-sample indices
    terminal_bound: float
    problem: object = field(repr=False, compare=False)
    cost_rule: str = "exp-trapezoid"
    clamp_fraction: float = 0.0
    error_budget: dict = field(default_factory=dict, compare=False)

    @property
    def domain(self):
        return (0.0, self.grid.T), self.grid.lo, self.grid.hi

    def _check(self, t, x, extend):
        tol = 1e-9
        lo, hi = np.array(self.grid.lo), np.array(self.grid.hi)
        span = hi - lo
        bad = np.any((x < lo - tol * span) | (x > hi + tol * span), axis=1)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise OutOfDomainError(f"state {x[i].tolist()} lies outside the grid box")
        if np.any(t < -tol * self.grid.dt) or (not extend and np.any(t > self.grid.T * (1 + 1e-12) + tol * self.grid.dt)):
            raise OutOfDomainError(f"time outside [0, {self.grid.T}]")

    def __call__(self, t, x, extend=False, method=None):
        """Interpolated value at times ``t`` (Q,) or scalar and states (Q, n) or (n,).

        With ``extend`` the field is 0 beyond the horizon.
        """
        scalar = np.ndim(t) == 0 and np.ndim(x) <= 1
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), (len(x),))
        self._check(t, x, extend)
        g = self.grid
        lo, hi = np.array(g.lo), np.array(g.hi)
        x = np.clip(x, lo, hi)
        tc = np.clip(t, 0.0, g.T)
        s = tc / g.dt
        k = np.clip(np.floor(s).astype(np.int64), 0, g.steps - 1)
        w = s - k
        method = method or g.interpolation
        v0 = interpolate(self.values, lo, hi, x, method, lead=k)
        v1 = interpolate(self.values, lo, hi, x, method, lead=k + 1)
        out = (1 - w) * v0 + w * v1
        if extend:
            out = np.where(t > g.T, 0.0, out)
        return float(out[0]) if scalar else out

    def extended(self):
        return ExtendedValueField(self)

    def interpolation_gap(self, t, x):
        """|PCHIP - multilinear| at the query points: a local interpolation error indicator."""
        a = self(t, x, method="pchip")
        b = self(t, x, method="multilinear")
        return np.abs(np.asarray(a) - np.asarray(b))

    def policy_controls(self, k):
        """Chosen control samples at slice ``k`` as (N, m)."""
        return self.problem.omega.samples()[self.policy[k].ravel()]

    def to_csv(self):
        g = self.grid
        pts = g.node_points()
        us = self.problem.omega.samples()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x{i}" for i in range(1, g.n + 1)] + ["v"]
                   + [f"u{i}" for i in range(1, us.shape[1] + 1)])
        for k, t in enumerate(g.times):
            vals = self.values[k].ravel()
            pol = self.policy[k].ravel()
            for x, v, j in zip(pts, vals, pol):
                w.writerow([repr(float(t))] + [repr(float(c)) for c in x] + [repr(float(v))]
                           + [repr(float(c)) for c in us[j]])
        return buf.getvalue()

    def metadata(self):
        return {"T": self.grid.T, "delta": self.problem.delta, "tail_bound": self.terminal_bound,
                "grid": self.grid.to_dict(), "problem_hash": problem_hash(self.problem),
                "interpolation": self.grid.interpolation, "cost_rule": self.cost_rule,
                "clamp_fraction": self.clamp_fraction, "error_budget": self.error_budget}

    def metadata_json(self):
        return dumps(self.metadata())


@dataclass(frozen=True)
class ExtendedValueField:
    """A ValueField continued by 0 for times beyond its horizon."""

    base: ValueField

    @property
    def domain(self):
        return (0.0, math.inf), self.base.grid.lo, self.base.grid.hi

    def __call__(self, t, x):
        return self.base(t, x, extend=True)


def _sweep(p, g, rule, clamp_threshold):
    X = g.node_points()
    N = len(X)
    us = p.omega.samples()
    lo, hi = np.array(g.lo), np.array(g.hi)
    K = g.steps
    values = np.zeros((K + 1, N))
    policy = np.zeros((K + 1, N), dtype=np.int64)
    Xb = X[:, None, :]
    clamps = 0
    for k in range(K - 1, -1, -1):
        t = k * g.dt
        foot = Xb + g.dt * p.eval_f(t, Xb, us)
        out = np.any((foot < lo) | (foot > hi), axis=-1)
        clamps += int(out.sum())
        cost = _step_costs(p, t, g.dt, Xb, us, foot, rule)
        cont = interpolate(values[k + 1], lo, hi, np.clip(foot, lo, hi).reshape(-1, g.n),
                           g.interpolation).reshape(N, len(us))
        q = cost + cont
        j = np.argmin(q, axis=1)
        policy[k] = j
        values[k] = q[np.arange(N), j]
    policy[K] = policy[K - 1]
    frac = clamps / (K * N * len(us))
    if frac > clamp_threshold:
        raise SolveError(
            f"{frac:.1%} of foot points left the box (threshold {clamp_threshold:.1%}); "
            "enlarge the box or reduce dt")
    return values.reshape((K + 1,) + g.nodes), policy.reshape((K + 1,) + g.nodes), frac


def _companion_grid(g):
    nodes = tuple((k - 1) // 2 + 1 if (k - 1) % 2 == 0 else k // 2 + 1 for k in g.nodes)
    nodes = tuple(max(2, k) for k in nodes)
    steps = max(1, g.steps // 2)
    return Grid(g.lo, g.hi, nodes, g.T / steps, g.T, g.interpolation)


def solve_value(p, g, cost_rule="exp-trapezoid", clamp_threshold=0.05, budget=True):
    """Backward recursion v_k(x) = min_u [step cost + v_{k+1}(x + dt f)], v_K = 0.

    The terminal value 0 is certified to within the tail bound at T. With ``budget`` the
    error budget is filled from a companion solve at half resolution.
    """
    if cost_rule not in COST_RULES:
        raise ValueError(f"unknown cost rule {cost_rule!r}")
    if p.n != g.n:
        raise ValueError("grid dimension differs from the state dimension")
    if p.M is not None:
        if any(lo > -p.M or hi < p.M for lo, hi in zip(g.lo, g.hi)):
            raise ValueError(f"grid box does not contain the invariant ball of radius {p.M}")
    tb = tail_bound(p, g.T)
    values, policy, frac = _sweep(p, g, cost_rule, clamp_threshold)
    vf = ValueField(g, values, policy, tb, p, cost_rule, frac)
    if not budget:
        return vf
    coarse = solve_value(p, _companion_grid(g), cost_rule, clamp_threshold=1.0, budget=False)
    ct = coarse.grid.times
    pts = g.node_points()
    tt = np.repeat(ct, len(pts))
    xx = np.tile(pts, (len(ct), 1))
    scheme = float(np.max(np.abs(vf(tt, xx) - coarse(tt, xx))))
    interp_gap = float(np.max(vf.interpolation_gap(*_cell_centres(g))))
    return replace(vf, error_budget={"tail": tb, "interpolation": interp_gap, "scheme": scheme})


def _cell_centres(g):
    centres = [0.5 * (a[1:] + a[:-1]) for a in g.axes()]
    mesh = np.stack([m.ravel() for m in np.meshgrid(*centres, indexing="ij")], axis=-1)
    times = g.times
    return np.repeat(times, len(mesh)), np.tile(mesh, (len(times), 1))


def total_budget(vf):
    b = vf.error_budget
    return float(b.get("tail", vf.terminal_bound) + b.get("interpolation", 0.0) + b.get("scheme", 0.0))


def dp_residual(vf, p, t, x, r, h=None):
    """min_u [vf(t+r, x(t+r)) + cost over [t, t+r]] - vf(t, x) with u held constant."""
    x = np.asarray(x, dtype=float).reshape(p.n)
    us = p.omega.samples()
    h = vf.grid.dt / 4 if h is None else h
    steps = max(1, math.ceil(r / h - 1e-9))
    x0 = np.repeat(x[None], len(us), axis=0)
    _, xe, ce = _rk4_segment(p, t, x0, np.zeros(len(us)), us, r / steps, steps, keep_path=False)
    ahead = vf(np.full(len(us), t + r), xe)
    return float(np.min(ahead + ce) - vf(t, x))


def lipschitz_estimate(vf, region=None, pairs=2000, seed=0):
    """Largest |vf(s1,z1) - vf(s2,z2)| / (|s1-s2| + |z1-z2|) over random pairs in ``region``.

    ``region`` is ``((t_lo, t_hi), [(lo, hi), ...])``; it defaults to the whole grid.
    """
    g = vf.grid
    if region is None:
        region = ((0.0, g.T), list(zip(g.lo, g.hi)))
    (t0, t1), box = region
    lo, hi = np.array(box, dtype=float).T
    rng = np.random.default_rng(seed)
    s1 = rng.uniform(t0, t1, pairs)
    z1 = rng.uniform(lo, hi, (pairs, g.n))
    s2 = rng.uniform(t0, t1, pairs)
    z2 = rng.uniform(lo, hi, (pairs, g.n))
    # half of the pairs are close, at a few grid spacings
    near = np.arange(pairs) % 2 == 1
    scale = 4 * g.spacing
    z2[near] = np.clip(z1[near] + rng.uniform(-1, 1, (near.sum(), g.n)) * scale, lo, hi)
    s2[near] = np.clip(s1[near] + rng.uniform(-1, 1, near.sum()) * 4 * g.dt, t0, t1)
    den = np.abs(s1 - s2) + np.linalg.norm(z1 - z2, axis=1)
    ok = den > 1e-12
    num = np.abs(vf(s1, z1) - vf(s2, z2))
    return float(np.max(num[ok] / den[ok], initial=0.0))


def greedy_control(vf, p, t, x, dt=None):
    """Control sample minimising one step of cost plus the interpolated value ahead."""
    g = vf.grid
    dt = g.dt if dt is None else dt
    dt = min(dt, g.T - t)
    us = p.omega.samples()
    lo, hi = np.array(g.lo), np.array(g.hi)
    xb = np.asarray(x, dtype=float).reshape(1, 1, p.n)
    foot = xb + dt * p.eval_f(t, xb, us)
    cost = _step_costs(p, t, dt, xb, us, foot, vf.cost_rule)[0]
    ahead = vf(np.full(len(us), t + dt), np.clip(foot[0], lo, hi))
    j = int(np.argmin(cost + ahead))
    return us[j]


def extract_policy_rollout(vf, p, tau, z, h=None):
    """Roll the state forward choosing the greedy control every grid step up to the horizon.

    Returns the induced control signal, its RK4 trajectory to the horizon and its cost certificate.
    """
    g = vf.grid
    h = g.dt / 4 if h is None else h
    z = np.asarray(z, dtype=float).reshape(p.n)
    vf._check(np.array([tau]), z[None], False)
    if not tau < g.T:
        raise ValueError("rollout must start before the horizon")
    t, x = float(tau), z.copy()
    starts, controls = [], []
    lo, hi = np.array(g.lo), np.array(g.hi)
    while t < g.T - 1e-12:
        step = min(g.dt, g.T - t)
        u = greedy_control(vf, p, t, x, step)
        starts.append(t)
        controls.append(u)
        sub = max(1, math.ceil(step / h - 1e-9))
        _, x, _ = _rk4_segment(p, t, x, 0.0, u, step / sub, sub, keep_path=False)
        t = tau + len(starts) * g.dt if tau + len(starts) * g.dt < g.T else g.T
        if np.any(x < lo - 1e-9) or np.any(x > hi + 1e-9):
            raise OutOfDomainError(f"rollout left the grid box at t={t!r}")
    breaks, values = [], [controls[0]]
    for s, u in zip(starts[1:], controls[1:]):
        if not np.array_equal(u, values[-1]):
            breaks.append(s)
            values.append(u)
    signal = ControlSignal(tau, tuple(breaks), np.array(values))
    traj = integrate(p, signal, tau, z, g.T, h)
    return signal, traj, certificate_from(p, traj)

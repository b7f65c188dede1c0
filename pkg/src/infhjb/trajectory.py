"""Piecewise-constant controls, RK4 trajectories with discounted cost, and tail certificates."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import CertificateRefused, ExprDomainError, IntegrationError
from .problem import tail_bound
from .report import CheckReport, dumps


@dataclass(frozen=True)
class ControlSignal:
    """Value ``values[k]`` on ``[breaks[k-1], breaks[k])`` with ``breaks[-1] := start``.

    The last value is held on ``[breaks[-1], inf)``.
    """

    start: float
    breaks: tuple
    values: np.ndarray  # (len(breaks) + 1, m)

    def __post_init__(self):
        breaks = tuple(float(b) for b in self.breaks)
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != len(breaks) + 1:
            raise ValueError("need exactly one more value than breakpoints")
        seq = (float(self.start),) + breaks
        if any(b <= a for a, b in zip(seq, seq[1:])):
            raise ValueError("breakpoints must be strictly increasing and after the start")
        if not np.all(np.isfinite(values)):
            raise ValueError("control values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "start", float(self.start))
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, start, value):
        return cls(start, (), np.atleast_1d(np.asarray(value, dtype=float))[None])

    @property
    def m(self):
        return self.values.shape[1]

    def piece_index(self, t):
        return int(np.searchsorted(self.breaks, t, side="right"))

    def value_at(self, t):
        if t < self.start:
            raise ValueError(f"t={t} precedes the signal start {self.start}")
        return self.values[self.piece_index(t)]

    def is_admissible(self, omega):
        return all(omega.contains(v) for v in self.values)

    def __eq__(self, other):
        if not isinstance(other, ControlSignal):
            return NotImplemented
        return (self.start == other.start and self.breaks == other.breaks
                and np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash((self.start, self.breaks, self.values.tobytes()))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_break"] + [f"u{i}" for i in range(1, self.m + 1)])
        for t, v in zip((self.start,) + self.breaks, self.values):
            w.writerow([repr(float(t))] + [repr(float(c)) for c in v])
        return buf.getvalue()


def concatenate(u1, s2, u2):
    """``u1`` on ``[start(u1), s2)`` followed by ``u2`` on ``[s2, inf)``."""
    if s2 < u1.start:
        raise ValueError(f"switch time {s2} precedes the start of the first signal ({u1.start})")
    if s2 < u2.start:
        raise ValueError(f"switch time {s2} precedes the start of the second signal ({u2.start})")
    k2 = u2.piece_index(s2)
    tail_breaks = u2.breaks[k2:]
    tail_values = u2.values[k2:]
    if s2 == u1.start:
        return ControlSignal(s2, tail_breaks, tail_values)
    head_breaks = tuple(b for b in u1.breaks if b < s2)
    head_values = u1.values[: len(head_breaks) + 1]
    return ControlSignal(u1.start, head_breaks + (float(s2),) + tail_breaks,
                         np.vstack([head_values, tail_values]))


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray  # (N+1,)
    x: np.ndarray  # (N+1, n)
    cost: np.ndarray  # (N+1,) accumulated discounted running cost
    integrator: str = "rk4"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.x.shape[1]
        w.writerow(["t"] + [f"x{i}" for i in range(1, n + 1)] + ["cost"])
        for ti, xi, ci in zip(self.t, self.x, self.cost):
            w.writerow([repr(float(ti))] + [repr(float(v)) for v in xi] + [repr(float(ci))])
        return buf.getvalue()

    def cost_nondecreasing(self):
        return bool(np.all(np.diff(self.cost) >= 0))


def _augmented_rhs(p, t, x, u):
    try:
        dx = p.eval_f(t, x, u)
        dc = np.broadcast_to(np.exp(-p.delta * t) * p.eval_l(t, x, u), x.shape[:-1])
    except ExprDomainError as exc:
        err = ExprDomainError(f"{exc} at t={float(t)!r}", exc.index)
        err.t, err.x = float(t), np.array(x)
        raise err from exc
    return dx, dc


def _rk4_segment(p, t0, x0, c0, u, dt, steps, keep_path=True):
    """Classical RK4 on (x, cost) with a fixed control; batched over leading axes of ``x0``."""
    x, c = np.array(x0, dtype=float), np.array(c0, dtype=float)
    ts, xs, cs = [t0], [x.copy()], [c.copy()]
    t = t0
    for i in range(steps):
        t_next = t0 + (i + 1) * dt
        h = t_next - t
        k1x, k1c = _augmented_rhs(p, t, x, u)
        k2x, k2c = _augmented_rhs(p, t + h / 2, x + h / 2 * k1x, u)
        k3x, k3c = _augmented_rhs(p, t + h / 2, x + h / 2 * k2x, u)
        k4x, k4c = _augmented_rhs(p, t + h, x + h * k3x, u)
        x_new = x + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        c_new = c + h / 6 * (k1c + 2 * k2c + 2 * k3c + k4c)
        if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(c_new))):
            raise IntegrationError(f"state blew up after t={t!r}", t=t, x=x.copy())
        x, c, t = x_new, c_new, t_next
        if keep_path:
            ts.append(t)
            xs.append(x.copy())
            cs.append(c.copy())
    if not keep_path:
        return t, x, c
    return np.array(ts), np.array(xs), np.array(cs)


def _pieces(u, tau, T):
    """Constant-control intervals of ``u`` covering ``[tau, T]``."""
    cuts = [tau] + [b for b in u.breaks if tau < b < T] + [T]
    for a, b in zip(cuts, cuts[1:]):
        yield a, b, u.value_at(a)


def integrate(p, u, tau, z, T, h):
    """RK4 trajectory from ``x(tau) = z`` to ``T``; steps never cross control breakpoints.

    Each constant piece of length L is split into ceil(L/h) equal substeps.
    """
    z = np.asarray(z, dtype=float).reshape(1, p.n)
    t, x, c = _integrate_states(p, u, tau, z, T, h)
    return Trajectory(t, x[:, 0], c[:, 0])


def _integrate_states(p, u, tau, zs, T, h):
    """Shared-control RK4 for a batch of initial states (B, n): times, (N+1, B, n), (N+1, B)."""
    if not T > tau:
        raise ValueError("final time must exceed the initial time")
    if not h > 0:
        raise ValueError("step must be positive")
    if u.start > tau:
        raise ValueError("control signal starts after the initial time")
    x = np.array(zs, dtype=float)
    c = np.zeros(len(x))
    ts, xs, cs = [np.array([tau])], [x[None].copy()], [c[None].copy()]
    for a, b, val in _pieces(u, tau, T):
        steps = max(1, math.ceil((b - a) / h - 1e-9))
        pt, px, pc = _rk4_segment(p, a, x, c, val, (b - a) / steps, steps)
        pt[-1] = b
        ts.append(pt[1:])
        xs.append(px[1:])
        cs.append(pc[1:])
        x, c = px[-1], pc[-1]
    return np.concatenate(ts), np.concatenate(xs), np.concatenate(cs)


@dataclass(frozen=True)
class CostCertificate:
    """J lies in ``[lo, hi]``: finite-horizon cost plus the certified tail."""

    T: float
    J_T: float
    B_tail: float
    lo: float
    hi: float

    @property
    def mid(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def half_width(self):
        return 0.5 * (self.hi - self.lo)

    def contains(self, J, tol=0.0):
        return self.lo - tol <= J <= self.hi + tol

    def to_dict(self):
        return {"T": self.T, "J_T": self.J_T, "B_tail": self.B_tail, "lo": self.lo, "hi": self.hi}

    def to_json(self):
        return dumps(self.to_dict())


def cost_is_nonnegative(p, t_max, per_axis=11):
    """Sampled check that l >= 0 on the invariant ball, all control samples and times up to ``t_max``."""
    if p.M is None:
        return False
    axes = [np.linspace(-p.M, p.M, per_axis if p.M > 0 else 1)] * p.n
    xs = np.array(list(itertools.product(*axes)))
    xs = xs[np.linalg.norm(xs, axis=1) <= p.M * (1 + 1e-12)]
    ts = np.linspace(0.0, t_max, 9)
    us = p.omega.samples()
    it, ix, iu = (g.ravel() for g in np.meshgrid(np.arange(len(ts)), np.arange(len(xs)),
                                                 np.arange(len(us)), indexing="ij"))
    vals = p.eval_l(ts[it], xs[ix], us[iu])
    return bool(np.all(np.asarray(vals) >= 0))


def certificate_from(p, traj, nonnegative=None):
    """Tail certificate for an already integrated trajectory."""
    if p.K2 is None or p.M is None:
        raise ValueError("a cost certificate needs K2 and M")
    radius = float(np.max(np.linalg.norm(traj.x, axis=1)))
    if radius > p.M * (1 + 1e-9) + 1e-12:
        raise CertificateRefused(
            f"trajectory reaches |x|={radius!r}, outside the invariant ball of radius {p.M!r}")
    T = float(traj.t[-1])
    J_T = float(traj.cost[-1])
    B = tail_bound(p, T)
    if nonnegative is None:
        nonnegative = cost_is_nonnegative(p, T + 10.0 / p.delta)
    lo = J_T if nonnegative else J_T - B
    return CostCertificate(T=T, J_T=J_T, B_tail=B, lo=lo, hi=J_T + B)


def cost_with_tail(p, u, tau, z, T, h, nonnegative=None):
    """Integrate to ``T`` and bound the remaining infinite-horizon cost."""
    traj = integrate(p, u, tau, z, T, h)
    return certificate_from(p, traj, nonnegative)


def check_gronwall(p, tau, z1, z2, u, T, h, R=None, tol=1e-6):
    """Check |x - x1| <= e^{K1 (t-tau)}|z - z1| and |x - z| <= K2 (1+R) e^{K2 (t-tau)} (t-tau)."""
    if p.K1 is None or p.K2 is None:
        raise ValueError("the trajectory estimates need K1 and K2")
    z1 = np.asarray(z1, dtype=float).reshape(p.n)
    z2 = np.asarray(z2, dtype=float).reshape(p.n)
    if R is None:
        R = float(max(np.linalg.norm(z1), np.linalg.norm(z2)))
    ts, xs, _ = _integrate_states(p, u, tau, np.stack([z1, z2]), T, h)
    s = ts - tau
    floor = 1e-12
    sep_bound = np.exp(p.K1 * s) * np.linalg.norm(z1 - z2)
    sep = np.linalg.norm(xs[:, 0] - xs[:, 1], axis=1)
    m_sep = sep_bound * (1 + tol) + floor - sep
    drift_bound = p.K2 * (1 + R) * np.exp(p.K2 * s) * s
    m_drift = np.minimum(drift_bound * (1 + tol) + floor - np.linalg.norm(xs[:, 0] - z1, axis=1),
                         drift_bound * (1 + tol) + floor - np.linalg.norm(xs[:, 1] - z2, axis=1))
    i, j = int(np.argmin(m_sep)), int(np.argmin(m_drift))
    worst = float(min(m_sep[i], m_drift[j]))
    witness = {"separation_t": float(ts[i]), "separation_margin": float(m_sep[i]),
               "drift_t": float(ts[j]), "drift_margin": float(m_drift[j])}
    return CheckReport(
        test="gronwall",
        passed=bool(m_sep[i] >= 0 and m_drift[j] >= 0),
        worst_margin=worst,
        point={"tau": tau, "z1": z1, "z2": z2},
        witness=witness,
        budget={"relative": tol, "absolute_floor": floor},
        details={"K1": p.K1, "K2": p.K2, "R": R, "separation_ok": bool(m_sep[i] >= 0),
                 "drift_ok": bool(m_drift[j] >= 0)},
    )

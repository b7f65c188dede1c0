"""Executable checks of the Dini-solution theory with explicit tolerance budgets."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CertificateRefused
from .gradients import (
    DiniProfile,
    RadiusSchedule,
    evaluate,
    field_dim,
    proximal_subgradient_test,
    proximal_supergradient_test,
    viscosity_touch,
    _sub_report,
)
from .problem import min_hamiltonian
from .report import CheckReport
from .trajectory import ControlSignal, _rk4_segment, certificate_from, integrate
from .value import ExtendedValueField, ValueField, total_budget

FD_SCALES = (1e-3, 1e-4, 1e-5)


# --------------------------------------------------------------------- budgets


def _unwrap(phi):
    if isinstance(phi, ValueField):
        return phi
    if isinstance(phi, ExtendedValueField):
        return phi.base
    return None


def point_budget(phi, p, point, atol=1e-6):
    """Per-point HJB residual allowance split into named terms.

    For solved value fields the scheme term is dt/2 times the largest second difference of
    v plus accumulated cost along the one-step characteristics, and the interpolation term is
    the PCHIP/multilinear gap divided by dt. Closed-form fields only get ``atol``.
    """
    vf = _unwrap(phi)
    terms = {"atol": atol, "scheme": 0.0, "interpolation": 0.0, "tail": 0.0}
    if vf is None:
        return terms
    t, x = float(point[0]), np.asarray(point[1], dtype=float)
    dt = vf.grid.dt
    us = p.omega.samples()
    S = len(us)
    lo, hi = np.array(vf.grid.lo), np.array(vf.grid.hi)
    f = p.eval_f(t, x[None], us)
    s = np.array([-dt, 0.0, dt])
    ts = np.clip(t + s, 0.0, vf.grid.T)
    xs = np.clip(x[None, None] + s[None, :, None] * f[:, None, :], lo, hi)
    v = vf(np.tile(ts, S), xs.reshape(-1, p.n)).reshape(S, 3)
    disc = np.exp(-p.delta * ts)[None] * np.broadcast_to(
        p.eval_l(np.tile(ts, S), xs.reshape(-1, p.n), np.repeat(us, 3, axis=0)), (S * 3,)).reshape(S, 3)
    second = np.abs(v[:, 2] - 2 * v[:, 1] + v[:, 0]) / dt**2
    cost_slope = np.abs(disc[:, 2] - disc[:, 0]) / (2 * dt)
    terms["scheme"] = float(dt / 2 * np.max(second + cost_slope))
    terms["interpolation"] = float(vf.interpolation_gap(t, x[None])[0] / dt)
    return terms


# ------------------------------------------------------------------ candidates


def gradient_candidates(phi, point, extra=()):
    """Central and one-sided finite-difference gradients (alpha, xi) at several scales."""
    t, x = float(point[0]), np.asarray(point[1], dtype=float)
    n = len(x)
    d = n + 1
    (t0, t1), lo, hi = phi.domain
    lo, hi = np.array(lo), np.array(hi)
    base = np.concatenate([[t], x])
    rows = []
    for h in FD_SCALES:
        shifts = np.vstack([np.eye(d) * h, -np.eye(d) * h])
        probes = base + shifts
        ok = ((probes[:, 0] >= t0) & (probes[:, 0] <= t1)
              & np.all(probes[:, 1:] >= lo, axis=1) & np.all(probes[:, 1:] <= hi, axis=1))
        vals = np.full(2 * d, np.nan)
        if ok.any():
            vals[ok] = evaluate(phi, probes[ok, 0], probes[ok, 1:])
        v0 = float(evaluate(phi, np.array([t]), x[None])[0])
        fwd = (vals[:d] - v0) / h
        bwd = (v0 - vals[d:]) / h
        central = (vals[:d] - vals[d:]) / (2 * h)
        if np.all(np.isfinite(central)):
            rows.append(central)
        for pattern in itertools.product((0, 1), repeat=d):
            g = np.where(np.array(pattern) == 0, fwd, bwd)
            if np.all(np.isfinite(g)):
                rows.append(g)
    rows.extend(np.asarray(c, dtype=float).ravel() for c in extra)
    out = []
    seen = set()
    for r in rows:
        key = tuple(np.round(r, 15))
        if key not in seen:
            seen.add(key)
            out.append(r)
    return np.array(out)


# ------------------------------------------------------------------- verdicts


@dataclass(frozen=True)
class SolutionVerdict:
    classification: str  # "dini-solution", "dini-sub", "dini-super" or "neither"
    sub_ok: bool
    super_ok: bool
    decay: CheckReport
    violations: tuple = ()
    worst_sub_margin: float = math.inf
    worst_super_margin: float = math.inf
    points: int = 0

    @property
    def is_sub(self):
        return self.sub_ok and self.decay.passed

    @property
    def is_super(self):
        return self.super_ok and self.decay.passed

    def to_dict(self):
        return {"classification": self.classification, "sub_ok": self.sub_ok, "super_ok": self.super_ok,
                "decay": self.decay.to_dict(), "violations": list(self.violations),
                "worst_sub_margin": self.worst_sub_margin, "worst_super_margin": self.worst_super_margin,
                "points": self.points}


def decay_check(phi, compacts, times, eps, per_axis=21):
    """sup over each box of |phi(tau, .)| at each tau; PASS iff the last sup is below ``eps``
    and the sups are non-increasing over the last three times."""
    times = [float(v) for v in times]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("times must be increasing")
    sups = []
    for tau in times:
        best = 0.0
        for box in compacts:
            axes = [np.linspace(lo, hi, per_axis if hi > lo else 1) for lo, hi in box]
            pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
            best = max(best, float(np.max(np.abs(evaluate(phi, np.full(len(pts), tau), pts)))))
        sups.append(best)
    tail = sups[-3:]
    monotone = all(b <= a for a, b in zip(tail, tail[1:]))
    below = sups[-1] <= eps
    return CheckReport(test="decay", passed=bool(monotone and below), worst_margin=float(eps - sups[-1]),
                       witness={"times": times, "sups": sups}, budget={"eps": eps},
                       details={"eventually_below": bool(below), "monotone_tail": bool(monotone)})


def default_decay(phi, p):
    """Times and error target suited to the field: the horizon for solved fields, multiples of 1/delta otherwise."""
    vf = _unwrap(phi)
    (t0, t1), lo, hi = phi.domain
    if vf is not None:
        T = vf.grid.T
        box = list(zip(vf.grid.lo, vf.grid.hi))
        return vf.extended(), [box], [T / 4, T / 2, 3 * T / 4, T, 2 * T], vf.terminal_bound
    R = max(1.0, p.M or 0.0)
    box = [(max(a, -R), min(b, R)) for a, b in zip(lo, hi)]
    times = [k / p.delta for k in (10, 20, 30, 40, 50)]
    times = [t for t in times if t0 <= t <= t1] or [t1]
    return phi, [box], times, 1e-6


def _hjb_values(p, point, cands):
    t, x = float(point[0]), np.asarray(point[1], dtype=float)
    if len(cands) == 0:
        return np.zeros(0)
    xs = np.repeat(x[None], len(cands), axis=0)
    H, _ = min_hamiltonian(p, np.full(len(cands), t), xs, cands[:, 1:])
    return cands[:, 0] + np.atleast_1d(H)


@dataclass
class _PointAnalysis:
    point: tuple
    cands: np.ndarray
    budget: dict
    hjb: np.ndarray
    dini_super: np.ndarray  # accepted as super-gradients
    dini_sub: np.ndarray

    @property
    def total_budget(self):
        return sum(self.budget.values())


def _analyse_point(phi, p, point, sched, extra, tol, directions, seed, atol):
    point = (float(point[0]), np.asarray(point[1], dtype=float))
    cands = gradient_candidates(phi, point, extra)
    profile = DiniProfile.build(phi, point, sched, directions, seed)
    neg = profile.negated()
    sup_ok = np.array([_sub_report("dini-supergradient", neg, -c, tol).passed for c in cands], dtype=bool)
    sub_ok = np.array([_sub_report("dini-subgradient", profile, c, tol).passed for c in cands], dtype=bool)
    budget = point_budget(phi, p, point, atol)
    passing = cands[sup_ok | sub_ok]
    if len(passing) > 1:
        fmax = float(np.max(np.abs(p.eval_f(point[0], point[1][None], p.omega.samples()))))
        spread = float(np.max(np.ptp(passing, axis=0)))
        budget["gradient"] = (1 + fmax) * spread
    else:
        budget["gradient"] = 0.0
    return _PointAnalysis(point, cands, budget, _hjb_values(p, point, cands), sup_ok, sub_ok)


def classify_dini(phi, p, sample_points, sched=RadiusSchedule(), candidates=None, tol=1e-6,
                  atol=1e-6, directions=None, seed=0, decay=None):
    """Classify ``phi`` as Dini sub-/super-solution of the HJB equation at the sample points.

    Sub-solution: alpha + H_min(t, x, xi) >= -budget for every accepted super-gradient.
    Super-solution: alpha + H_min(t, x, xi) <= budget for every accepted sub-gradient.
    ``candidates`` adds user gradients: a list used at every point, or ``point -> list``.
    ``decay`` overrides ``(field, compacts, times, eps)`` for the decay condition.
    """
    violations = []
    worst_sub, worst_super = math.inf, math.inf
    for pt in sample_points:
        extra = candidates(pt) if callable(candidates) else (candidates or ())
        a = _analyse_point(phi, p, pt, sched, extra, tol, directions, seed, atol)
        B = a.total_budget
        for c, r in zip(a.cands[a.dini_super], a.hjb[a.dini_super]):
            worst_sub = min(worst_sub, r + B)
            if r < -B:
                violations.append({"kind": "sub", "t": a.point[0], "x": a.point[1].tolist(),
                                   "candidate": c.tolist(), "residual": float(r), "budget": B})
        for c, r in zip(a.cands[a.dini_sub], a.hjb[a.dini_sub]):
            worst_super = min(worst_super, B - r)
            if r > B:
                violations.append({"kind": "super", "t": a.point[0], "x": a.point[1].tolist(),
                                   "candidate": c.tolist(), "residual": float(r), "budget": B})
    sub_ok = not any(v["kind"] == "sub" for v in violations)
    super_ok = not any(v["kind"] == "super" for v in violations)
    dphi, compacts, times, eps = decay if decay is not None else default_decay(phi, p)
    drep = decay_check(dphi, compacts, times, eps)
    if sub_ok and super_ok and drep.passed:
        cls = "dini-solution"
    elif sub_ok and drep.passed:
        cls = "dini-sub"
    elif super_ok and drep.passed:
        cls = "dini-super"
    else:
        cls = "neither"
    return SolutionVerdict(cls, sub_ok, super_ok, drep, tuple(violations), float(worst_sub),
                           float(worst_super), len(sample_points))


def interior_points(phi, count, seed=0, margin=0.15, t_max=None):
    """Deterministic random points at least ``margin`` inside the field's domain."""
    (t0, t1), lo, hi = phi.domain
    n = len(lo)
    if t_max is not None:
        t1 = min(t1, t_max)
    if not math.isfinite(t1):
        t1 = t0 + 10.0
    lo = np.maximum(np.array(lo), -10.0) + margin
    hi = np.minimum(np.array(hi), 10.0) - margin
    rng = np.random.default_rng(seed)
    ts = rng.uniform(t0 + margin, t1 - margin, count)
    xs = rng.uniform(lo, hi, (count, n))
    return [(float(t), x) for t, x in zip(ts, xs)]


# ---------------------------------------------------------------- monotonicity


def _field_budget(phi):
    vf = _unwrap(phi)
    if vf is None:
        return {"interpolation": 0.0, "scheme": 0.0, "tail": 0.0}
    b = vf.error_budget
    return {"interpolation": b.get("interpolation", 0.0), "scheme": b.get("scheme", 0.0),
            "tail": b.get("tail", vf.terminal_bound)}


def monotonicity_check(phi, p, process, tail, mode="non-decreasing", tol=None):
    """Monotonicity of g(t) = phi(t, x(t)) - (J_total - c(t)) along a process.

    J_total is the certificate midpoint; the default tolerance is the certificate half-width
    plus twice the field's interpolation and scheme budgets.
    """
    if mode not in ("non-decreasing", "non-increasing"):
        raise ValueError(f"unknown mode {mode!r}")
    _, traj = process
    fb = _field_budget(phi)
    if tol is None:
        tol = tail.half_width + 2 * (fb["interpolation"] + fb["scheme"]) + 1e-9
    vals = evaluate(phi, traj.t, traj.x)
    g = vals - (tail.mid - traj.cost)
    if mode == "non-decreasing":
        drops = g - np.maximum.accumulate(g)
    else:
        drops = np.minimum.accumulate(g) - g
    i = int(np.argmin(drops))
    worst = float(drops[i])
    rise = float(np.max(g) - np.min(g))
    return CheckReport(
        test=f"monotonicity-{mode}", passed=bool(worst >= -tol), worst_margin=worst,
        witness={"t": float(traj.t[i]), "x": traj.x[i].tolist()},
        budget={"tolerance": tol, "certificate_half_width": tail.half_width, **fb},
        details={"g_start": float(g[0]), "g_end": float(g[-1]), "g_range": rise},
    )


def constant_along(phi, p, process, tail, tol=None):
    """Both monotonicity modes at once: g is constant within the tolerance."""
    up = monotonicity_check(phi, p, process, tail, "non-decreasing", tol)
    down = monotonicity_check(phi, p, process, tail, "non-increasing", tol)
    return CheckReport(test="monotonicity-constant", passed=up.passed and down.passed,
                       worst_margin=min(up.worst_margin, down.worst_margin), witness=None,
                       budget=up.budget, details={"non_decreasing": up.to_dict(), "non_increasing": down.to_dict()})


def random_admissible_process(p, tau, z, T, pieces=8, seed=0, h=0.01, radius=None):
    """Random piecewise-constant control that keeps the state in the ball of ``radius``.

    Each piece draws control samples in random order and keeps the first one whose
    trajectory piece stays inside the ball.
    """
    rng = np.random.default_rng(seed)
    radius = p.M if radius is None else radius
    us = p.omega.samples()
    cuts = np.sort(rng.uniform(tau, T, pieces - 1))
    cuts = np.concatenate([[tau], cuts, [T]])
    x = np.asarray(z, dtype=float).reshape(p.n)
    values = []
    for a, b in zip(cuts, cuts[1:]):
        steps = max(1, math.ceil((b - a) / h - 1e-9))
        order = rng.permutation(len(us))
        x0 = np.repeat(x[None], len(us), axis=0)
        _, paths, _ = _rk4_segment(p, a, x0, np.zeros(len(us)), us, (b - a) / steps, steps)
        inside = np.max(np.linalg.norm(paths, axis=2), axis=0) <= radius if radius is not None \
            else np.ones(len(us), dtype=bool)
        ok = [j for j in order if inside[j]]
        if not ok:
            raise CertificateRefused(f"no control sample keeps the state inside radius {radius} after t={a!r}")
        values.append(us[ok[0]])
        x = paths[-1, ok[0]]
    signal = ControlSignal(tau, tuple(float(c) for c in cuts[1:-1]), np.array(values))
    traj = integrate(p, signal, tau, z, T, h)
    return signal, traj, certificate_from(p, traj)


# --------------------------------------------------------------- certificates


def certify_optimal(phi, p, process, tail, verdict, tol=None):
    """PASS iff |phi(s, z) - J| <= certificate half-width + tol, for a verified sub-solution phi."""
    if verdict is None or not verdict.is_sub:
        raise ValueError("certify_optimal needs a Dini sub-solution verdict for the field")
    _, traj = process
    fb = _field_budget(phi)
    if tol is None:
        tol = fb["interpolation"] + fb["scheme"] + fb["tail"] + 1e-9
    s, z = float(traj.t[0]), traj.x[0]
    value = float(evaluate(phi, np.array([s]), z[None])[0])
    gap = abs(value - tail.mid)
    allowed = tail.half_width + tol
    return CheckReport(
        test="certify-optimal", passed=bool(gap <= allowed), worst_margin=float(allowed - gap),
        point={"s": s, "z": z.tolist()}, witness={"phi": value, "J_mid": tail.mid},
        budget={"certificate_half_width": tail.half_width, "tolerance": tol, **fb},
        details={"gap": gap, "J_lo": tail.lo, "J_hi": tail.hi},
    )


# -------------------------------------------------------------------- sandwich


@dataclass(frozen=True)
class SandwichBound:
    point: tuple
    lower: float
    upper: float
    value: Optional[float] = None
    consistent: Optional[bool] = None

    @property
    def width(self):
        return self.upper - self.lower

    def to_dict(self):
        return {"t": self.point[0], "x": list(self.point[1]), "lower": self.lower, "upper": self.upper,
                "value": self.value, "consistent": self.consistent}


def sandwich(subs, supers, p, points, vf=None, tol=0.0):
    """Bounds max(sub fields) <= V <= min(super fields) at each point.

    ``subs`` and ``supers`` are lists of ``(field, verdict)`` pairs. Fields whose verdict
    does not certify the required side are dropped with a warning.
    """
    good_subs, good_supers = [], []
    for phi, verdict in subs:
        if verdict is not None and verdict.is_sub:
            good_subs.append(phi)
        else:
            warnings.warn(f"excluding {phi!r:.60} from the lower bound: not a verified sub-solution")
    for phi, verdict in supers:
        if verdict is not None and verdict.is_super:
            good_supers.append(phi)
        else:
            warnings.warn(f"excluding {phi!r:.60} from the upper bound: not a verified super-solution")
    ts = np.array([float(pt[0]) for pt in points])
    xs = np.array([np.asarray(pt[1], dtype=float).ravel() for pt in points])
    lower = np.full(len(ts), -math.inf)
    upper = np.full(len(ts), math.inf)
    for phi in good_subs:
        lower = np.maximum(lower, evaluate(phi, ts, xs))
    for phi in good_supers:
        upper = np.minimum(upper, evaluate(phi, ts, xs))
    values = evaluate(vf, ts, xs) if vf is not None else [None] * len(ts)
    out = []
    for t, x, a, b, v in zip(ts, xs, lower, upper, values):
        ok = None if v is None else bool(a - tol <= v <= b + tol)
        out.append(SandwichBound((float(t), tuple(x.tolist())), float(a), float(b),
                                 None if v is None else float(v), ok))
    return out


# ---------------------------------------------------------------- equivalence


FAMILIES = ("dini", "proximal", "viscosity")


def _family_verdict(accepted, residuals, budget, side):
    if not accepted.any():
        return "vacuous"
    r = residuals[accepted]
    bad = r < -budget if side == "sub" else r > budget
    return "violated" if bad.any() else "compatible"


def equivalence_crosscheck(phi, p, points, sched=RadiusSchedule(), sigmas=(1.0, 10.0, 100.0, 1000.0),
                           rho=0.02, tol=1e-6, atol=1e-6, hjb_tol=None, seed=0):
    """Run Dini, proximal and viscosity tests on the same candidates and compare HJB verdicts.

    Each family accepts candidate super-/sub-gradients its own way; its verdict on the
    sub-solution and super-solution inequalities is "compatible", "violated" or "vacuous".
    A point disagrees when one family reports "violated" where another reports "compatible".
    ``hjb_tol`` maps family names to a replacement HJB budget (for self-tests).
    """
    hjb_tol = dict(hjb_tol or {})
    disagreements = []
    rows = []
    for pt in points:
        a = _analyse_point(phi, p, pt, sched, (), tol, None, seed, atol)
        B = a.total_budget
        prox_sup = np.array([any(proximal_supergradient_test(phi, a.point, c, s, rho).passed for s in sigmas)
                             for c in a.cands], dtype=bool)
        prox_sub = np.array([any(proximal_subgradient_test(phi, a.point, c, s, rho).passed for s in sigmas)
                             for c in a.cands], dtype=bool)
        visc_sup = np.array([any(viscosity_touch(phi, a.point, c, s, rho, side="above") for s in sigmas)
                             for c in a.cands], dtype=bool)
        visc_sub = np.array([any(viscosity_touch(phi, a.point, c, s, rho, side="below") for s in sigmas)
                             for c in a.cands], dtype=bool)
        accepted = {"dini": (a.dini_super, a.dini_sub), "proximal": (prox_sup, prox_sub),
                    "viscosity": (visc_sup, visc_sub)}
        base = B - a.budget["gradient"]
        fmax = float(np.max(np.abs(p.eval_f(a.point[0], a.point[1][None], p.omega.samples()))))
        verdicts = {}
        for fam, (sup_acc, sub_acc) in accepted.items():
            # each family is only as sharp as the spread of the candidates it accepts
            acc = a.cands[sup_acc | sub_acc]
            spread = float(np.max(np.ptp(acc, axis=0))) if len(acc) > 1 else 0.0
            b = hjb_tol.get(fam, base + (1 + fmax) * spread)
            verdicts[fam] = {"sub": _family_verdict(sup_acc, a.hjb, b, "sub"),
                             "super": _family_verdict(sub_acc, a.hjb, b, "super")}
        row = {"t": a.point[0], "x": a.point[1].tolist(), "budget": base, "verdicts": verdicts}
        rows.append(row)
        for side in ("sub", "super"):
            seen = {verdicts[f][side] for f in FAMILIES}
            if "violated" in seen and "compatible" in seen:
                disagreements.append({"t": a.point[0], "x": a.point[1].tolist(), "side": side,
                                      "verdicts": {f: verdicts[f][side] for f in FAMILIES}})
    return CheckReport(
        test="equivalence-crosscheck", passed=not disagreements,
        worst_margin=float(-len(disagreements)),
        witness=disagreements[0] if disagreements else None,
        budget={"tol": tol, "atol": atol, "sigmas": list(sigmas), "rho": rho, "overrides": hjb_tol},
        details={"points": len(rows), "disagreements": disagreements, "rows": rows},
    )

"""Control problems, Hamiltonians, sampled assumption audits and problem files."""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ExprSyntaxError, ProblemFileError
from .expr import Expr, parse_expr, pretty


@dataclass(frozen=True)
class ControlSet:
    """Finite evaluation set for the control constraint.

    Either ``points`` (an explicit list) or ``box`` (per-axis ``(lo, hi)``) with
    ``samples_per_axis`` evenly spaced samples per axis, corners included.
    Enumeration order is row-major with the last axis varying fastest.
    """

    points: Optional[tuple] = None
    box: Optional[tuple] = None
    samples_per_axis: int = 2

    def __post_init__(self):
        if (self.points is None) == (self.box is None):
            raise ValueError("give exactly one of points or box")
        if self.points is not None:
            pts = tuple(tuple(float(c) for c in np.atleast_1d(p)) for p in self.points)
            if not pts:
                raise ValueError("control point list is empty")
            if len({len(p) for p in pts}) != 1:
                raise ValueError("control points have mixed dimensions")
            if not np.all(np.isfinite(pts)):
                raise ValueError("control points must be finite")
            object.__setattr__(self, "points", pts)
        else:
            box = tuple((float(lo), float(hi)) for lo, hi in self.box)
            if not box or any(not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi) for lo, hi in box):
                raise ValueError(f"invalid control box {self.box!r}")
            if self.samples_per_axis < 2:
                raise ValueError("a control box needs at least 2 samples per axis")
            object.__setattr__(self, "box", box)

    @classmethod
    def interval(cls, lo, hi, samples):
        return cls(box=((lo, hi),), samples_per_axis=samples)

    @property
    def dim(self):
        return len(self.points[0]) if self.points is not None else len(self.box)

    def samples(self):
        """Array of shape (S, m) in enumeration order."""
        return self._samples

    @property
    def _samples(self):
        cached = self.__dict__.get("_cache")
        if cached is None:
            if self.points is not None:
                cached = np.array(self.points, dtype=float)
            else:
                axes = [np.linspace(lo, hi, self.samples_per_axis) for lo, hi in self.box]
                cached = np.array(list(itertools.product(*axes)), dtype=float)
            cached.setflags(write=False)
            object.__setattr__(self, "_cache", cached)
        return cached

    def bounding_box(self):
        if self.box is not None:
            return self.box
        s = self.samples()
        return tuple(zip(s.min(axis=0).tolist(), s.max(axis=0).tolist()))

    def contains(self, u, atol=1e-12):
        u = np.asarray(u, dtype=float)
        if self.points is not None:
            return bool(np.any(np.all(np.abs(self.samples() - u) <= atol, axis=1)))
        lo, hi = np.array(self.box).T
        return bool(np.all(u >= lo - atol) and np.all(u <= hi + atol))


@dataclass(frozen=True)
class ControlProblem:
    """Discounted infinite-horizon problem: minimise the integral of e^{-delta t} l along x' = f.

    ``K1``, ``K2`` and ``M`` are the declared Lipschitz, growth and invariant-radius
    constants; any may be ``None`` until audited.
    """

    n: int
    m: int
    f: tuple
    l: Expr
    omega: ControlSet
    delta: float
    K1: Optional[float] = None
    K2: Optional[float] = None
    M: Optional[float] = None
    claims_tilde_a6: bool = False
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("state and control dimensions must be at least 1")
        if not (np.isfinite(self.delta) and self.delta > 0):
            raise ValueError("discount rate must be positive")
        if len(self.f) != self.n:
            raise ValueError(f"expected {self.n} dynamics components, got {len(self.f)}")
        if self.omega.dim != self.m:
            raise ValueError(f"control set has dimension {self.omega.dim}, expected {self.m}")
        for expr in (*self.f, self.l):
            for kind, idx in expr.variables():
                if (kind == "x" and idx > self.n) or (kind == "u" and idx > self.m):
                    raise ValueError(f"{kind}{idx} is outside the declared dimensions")
        for key in ("K1", "K2", "M"):
            v = getattr(self, key)
            if v is not None and not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{key} must be a finite nonnegative number")
        if self.claims_tilde_a6:
            if self.K1 is None:
                raise ValueError("claiming K1 < delta requires a declared K1")
            if not self.K1 < self.delta:
                raise ValueError(f"K1={self.K1} is not below delta={self.delta}")

    @classmethod
    def from_strings(cls, f, l, omega, delta, n=None, m=None, **kw):
        """Build from expression strings; dimensions default to ``len(f)`` and ``omega.dim``."""
        n = len(f) if n is None else n
        m = omega.dim if m is None else m
        fx = tuple(parse_expr(s, n, m) for s in f)
        return cls(n=n, m=m, f=fx, l=parse_expr(l, n, m), omega=omega, delta=float(delta), **kw)

    def eval_f(self, t, x, u):
        """Dynamics on broadcast inputs; returns (..., n)."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        shape = np.broadcast_shapes(t.shape, x.shape[:-1], u.shape[:-1])
        if self.n == 1:
            return np.broadcast_to(self.f[0].evaluate(t, x, u), shape)[..., None]
        return np.stack([np.broadcast_to(fi.evaluate(t, x, u), shape) for fi in self.f], axis=-1)

    def eval_l(self, t, x, u):
        return self.l.evaluate(t, x, u)

    def with_constants(self, **kw):
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        data.update(kw)
        return ControlProblem(**data)


# ---------------------------------------------------------------- Hamiltonians


def eval_hamiltonian(p, t, x, lam, u):
    """H = <lam, f(t,x,u)> + e^{-delta t} l(t,x,u); broadcasts over leading axes."""
    t = np.asarray(t, dtype=float)
    lam = np.asarray(lam, dtype=float)
    out = np.sum(lam * p.eval_f(t, x, u), axis=-1) + np.exp(-p.delta * t) * p.eval_l(t, x, u)
    return float(out) if np.ndim(out) == 0 else out


def hamiltonian_table(p, t, x, lam):
    """H at every control sample: shape (..., S) for points (..., n)."""
    t = np.asarray(t, dtype=float)[..., None]
    x = np.asarray(x, dtype=float)[..., None, :]
    lam = np.asarray(lam, dtype=float)[..., None, :]
    return eval_hamiltonian(p, t, x, lam, p.omega.samples())


def min_hamiltonian(p, t, x, lam):
    """Minimum of H over the control samples and the first minimising sample."""
    table = hamiltonian_table(p, t, x, lam)
    k = np.argmin(table, axis=-1)
    val = np.take_along_axis(table, k[..., None], axis=-1)[..., 0]
    u = p.omega.samples()[k]
    if np.ndim(val) == 0:
        return float(val), u
    return val, u


def max_hamiltonian(p, t, x, lam):
    """Maximum of H over the control samples and the first maximising sample."""
    table = hamiltonian_table(p, t, x, lam)
    k = np.argmax(table, axis=-1)
    val = np.take_along_axis(table, k[..., None], axis=-1)[..., 0]
    u = p.omega.samples()[k]
    if np.ndim(val) == 0:
        return float(val), u
    return val, u


# ---------------------------------------------------------------------- audits


@dataclass(frozen=True)
class AuditReport:
    K1: float  # sampled sum-form Lipschitz ratio of (l, f) in x
    K1_f: float
    K1_l: float
    K2: float
    convexity: str  # "convex", "nonconvex" or "inconclusive"
    tilde_a6_sampled: bool
    tilde_a6_declared: Optional[bool]
    samples: int

    def to_dict(self):
        return dict(self.__dict__)


def audit_assumptions(p, t_range, x_box, sample_budget=1000, seed=0):
    """Sampled lower estimates of the Lipschitz and growth constants plus a convexity probe.

    ``t_range`` is ``(t_lo, t_hi)`` and ``x_box`` a sequence of per-axis ``(lo, hi)``.
    """
    if sample_budget < 100:
        raise ValueError("sample_budget must be at least 100")
    rng = np.random.default_rng(seed)
    lo, hi = np.array(x_box, dtype=float).T
    t0, t1 = map(float, t_range)
    us = p.omega.samples()
    S = len(us)

    # Lipschitz ratios: half far pairs, half close pairs
    N = sample_budget
    t = rng.uniform(t0, t1, N)
    x = rng.uniform(lo, hi, (N, p.n))
    far = rng.uniform(lo, hi, (N, p.n))
    near = np.clip(x + rng.normal(size=(N, p.n)) * 1e-4 * (hi - lo), lo, hi)
    z = np.where((np.arange(N) % 2 == 0)[:, None], far, near)
    u = us[rng.integers(0, S, N)]
    dist = np.linalg.norm(x - z, axis=1)
    ok = dist > 1e-12
    df = np.linalg.norm(p.eval_f(t, x, u) - p.eval_f(t, z, u), axis=1)
    dl = np.abs(p.eval_l(t, x, u) - p.eval_l(t, z, u))
    dl = np.broadcast_to(dl, (N,))
    K1_f = float(np.max(df[ok] / dist[ok], initial=0.0))
    K1_l = float(np.max(dl[ok] / dist[ok], initial=0.0))
    K1 = float(np.max((df[ok] + dl[ok]) / dist[ok], initial=0.0))

    # growth: random points plus corners and centre of the box
    corners = np.array(list(itertools.product(*zip(lo, hi))))
    pts = np.vstack([rng.uniform(lo, hi, (N, p.n)), corners, ((lo + hi) / 2)[None]])
    tg = np.concatenate([rng.uniform(t0, t1, N), np.full(len(pts) - N, t0)])
    tt = np.repeat(tg, S)
    xx = np.repeat(pts, S, axis=0)
    uu = np.tile(us, (len(pts), 1))
    mag = np.abs(np.broadcast_to(p.eval_l(tt, xx, uu), tt.shape)) + np.linalg.norm(p.eval_f(tt, xx, uu), axis=1)
    K2 = float(np.max(mag / (1 + np.linalg.norm(xx, axis=1))))

    convexity = _convexity_probe(p, rng, t0, t1, lo, hi, us, max(10, N // 50))

    declared = None if p.K1 is None else bool(p.K1 < p.delta)
    return AuditReport(K1, K1_f, K1_l, K2, convexity, bool(K1 < p.delta), declared, N)


def _convexity_probe(p, rng, t0, t1, lo, hi, us, n_points):
    if len(us) == 1:
        return "convex"
    verdicts = []
    for _ in range(n_points):
        t = rng.uniform(t0, t1)
        x = rng.uniform(lo, hi)
        img = np.column_stack([
            np.broadcast_to(np.exp(-p.delta * t) * p.eval_l(t, x, us), (len(us),)),
            p.eval_f(t, x, us),
        ])
        img = np.unique(img, axis=0)
        if len(img) == 1:
            verdicts.append("convex")
            continue
        if len(img) < 3:
            verdicts.append("inconclusive")
            continue
        d = np.linalg.norm(img[:, None] - img[None], axis=-1)
        np.fill_diagonal(d, np.inf)
        spacing = d.min(axis=1).max()
        i, j = rng.integers(0, len(img), (2, 4 * len(img)))
        mids = (img[i] + img[j]) / 2
        gap = np.linalg.norm(mids[:, None] - img[None], axis=-1).min(axis=1)
        verdicts.append("convex" if np.all(gap <= spacing * (1 + 1e-9)) else "nonconvex")
    if "nonconvex" in verdicts:
        return "nonconvex"
    if all(v == "convex" for v in verdicts):
        return "convex"
    return "inconclusive"


def horizon_for_target(p, eps, dt=None):
    """Smallest T with e^{-delta T} K2 (1+M)/delta <= eps, rounded up to a multiple of ``dt``."""
    if p.K2 is None or p.M is None:
        raise ValueError("the horizon formula needs K2 and M")
    if eps <= 0:
        raise ValueError("error target must be positive")
    ratio = p.K2 * (1 + p.M) / (p.delta * eps)
    T = max(np.log(ratio) / p.delta, 0.0) if ratio > 0 else 0.0
    if dt is not None:
        steps = max(1, int(np.ceil(T / dt - 1e-9)))
        T = steps * dt
    return float(T)


def tail_bound(p, T):
    """e^{-delta T} K2 (1+M)/delta."""
    if p.K2 is None or p.M is None:
        raise ValueError("the tail bound needs K2 and M")
    return float(np.exp(-p.delta * T) * p.K2 * (1 + p.M) / p.delta)


# --------------------------------------------------------------- problem files


def loads_problem(text):
    """Parse the line-oriented ``key = value`` problem format."""
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ProblemFileError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in entries:
            raise ProblemFileError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = (lineno, value)

    def take(key, conv=str, default=None, required=True):
        if key not in entries:
            if required:
                raise ProblemFileError(f"missing key {key!r}")
            return default
        lineno, value = entries.pop(key)
        try:
            return conv(value)
        except (ValueError, TypeError) as exc:
            raise ProblemFileError(f"line {lineno}: bad value for {key!r}: {exc}") from None

    n = take("n", int)
    m = take("m", int)
    delta = take("delta", float)
    f_src = [take(f"f.{i}") for i in range(1, n + 1)]
    l_src = take("l")
    if "omega.points" in entries:
        omega = ControlSet(points=take("omega.points", json.loads))
    else:
        flat = take("omega.box", lambda s: [float(v) for v in s.replace(",", " ").split()])
        if len(flat) != 2 * m:
            raise ProblemFileError(f"omega.box needs {2 * m} numbers, got {len(flat)}")
        omega = ControlSet(box=tuple(zip(flat[0::2], flat[1::2])),
                           samples_per_axis=take("omega.samples_per_axis", int, 21, False))
    K1 = take("K1", float, None, False)
    K2 = take("K2", float, None, False)
    M = take("M", float, None, False)
    R = take("invariant_radius", float, None, False)
    if R is not None:
        if M is not None and M != R:
            raise ProblemFileError("M and invariant_radius disagree")
        M = R
    tilde = take("claims_tilde_a6", lambda s: {"true": True, "false": False}[s.lower()], False, False)
    name = take("name", str, "", False)
    if entries:
        raise ProblemFileError(f"unknown keys: {', '.join(sorted(entries))}")
    try:
        f = tuple(parse_expr(s, n, m) for s in f_src)
        l = parse_expr(l_src, n, m)
        return ControlProblem(n=n, m=m, f=f, l=l, omega=omega, delta=delta, K1=K1, K2=K2, M=M,
                              claims_tilde_a6=tilde, name=name)
    except ExprSyntaxError as exc:
        raise ProblemFileError(f"expression error: {exc}") from exc
    except ValueError as exc:
        raise ProblemFileError(str(exc)) from exc


def load_problem(path):
    with open(path, encoding="utf-8") as fh:
        return loads_problem(fh.read())


def dumps_problem(p):
    """Canonical text form; ``loads_problem(dumps_problem(p)) == p``."""
    lines = []
    if p.name:
        lines.append(f"name = {p.name}")
    lines += [f"n = {p.n}", f"m = {p.m}", f"delta = {p.delta!r}"]
    lines += [f"f.{i} = {pretty(fi)}" for i, fi in enumerate(p.f, 1)]
    lines.append(f"l = {pretty(p.l)}")
    if p.omega.points is not None:
        lines.append(f"omega.points = {json.dumps([list(q) for q in p.omega.points])}")
    else:
        lines.append("omega.box = " + " ".join(f"{lo!r} {hi!r}" for lo, hi in p.omega.box))
        lines.append(f"omega.samples_per_axis = {p.omega.samples_per_axis}")
    for key in ("K1", "K2", "M"):
        v = getattr(p, key)
        if v is not None:
            lines.append(f"{key} = {float(v)!r}")
    if p.claims_tilde_a6:
        lines.append("claims_tilde_a6 = true")
    return "\n".join(lines) + "\n"


def problem_hash(p):
    return hashlib.sha256(dumps_problem(p).encode("utf-8")).hexdigest()

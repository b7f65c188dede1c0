import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from infhjb.errors import ProblemFileError
from infhjb.expr import parse_expr, pretty
from infhjb.problem import (
    ControlProblem,
    ControlSet,
    audit_assumptions,
    dumps_problem,
    eval_hamiltonian,
    horizon_for_target,
    load_problem,
    loads_problem,
    max_hamiltonian,
    min_hamiltonian,
    problem_hash,
    tail_bound,
)

UNIT = ControlSet.interval(-1.0, 1.0, 21)


def make(f, l, omega=UNIT, delta=1.0, **kw):
    return ControlProblem.from_strings(f, l, omega, delta, **kw)


# ---------------------------------------------------------------- control sets


def test_box_samples_include_corners_and_are_deterministic():
    c = ControlSet(box=((-1, 1), (0, 2)), samples_per_axis=3)
    s = c.samples()
    assert s.shape == (9, 2)
    for corner in [(-1, 0), (-1, 2), (1, 0), (1, 2)]:
        assert any(np.array_equal(row, corner) for row in s)
    assert np.array_equal(s, ControlSet(box=((-1, 1), (0, 2)), samples_per_axis=3).samples())
    assert s.flags.writeable is False


@pytest.mark.parametrize("kw", [
    {"points": []},
    {"points": [[0.0], [0.0, 1.0]]},
    {"box": ((1.0, 0.0),)},
    {"box": ((0.0, 1.0),), "samples_per_axis": 1},
    {},
    {"points": [[0.0]], "box": ((0.0, 1.0),)},
])
def test_control_set_validation(kw):
    with pytest.raises(ValueError):
        ControlSet(**kw)


def test_problem_validation():
    with pytest.raises(ValueError):
        make(["u1"], "0", delta=0.0)
    with pytest.raises(ValueError):
        make(["u1"], "0", delta=1.0, K1=1.0, claims_tilde_a6=True)
    with pytest.raises(ValueError):
        make(["u1"], "0", K2=-1.0)
    assert make(["u1"], "0", delta=2.0, K1=1.0, claims_tilde_a6=True).claims_tilde_a6


# ---------------------------------------------------------------- Hamiltonians


def test_hamiltonian_vanishes_with_zero_costate_and_cost():
    p = make(["x1*u1 + t"], "0")
    assert eval_hamiltonian(p, 0.3, [0.7], [0.0], [0.4]) == 0.0


def test_hamiltonian_direct_substitution():
    p = make(["u1"], "1")
    assert eval_hamiltonian(p, 0.0, [0.0], [2.0], [3.0]) == 7.0


def test_hamiltonian_discount_factor():
    p = make(["-x1"], "x1^2", delta=3.0)
    assert math.isclose(eval_hamiltonian(p, math.log(2), [1.0], [1.0], [0.0]), -0.875, rel_tol=1e-14)


def test_singleton_control_set():
    p = make(["x1 + u1"], "u1^2 + x1", omega=ControlSet(points=[[0.5]]))
    h = eval_hamiltonian(p, 0.2, [0.3], [1.5], [0.5])
    assert min_hamiltonian(p, 0.2, [0.3], [1.5])[0] == h
    assert max_hamiltonian(p, 0.2, [0.3], [1.5])[0] == h


@pytest.mark.parametrize("c", [-2.0, -0.5, 0.5, 3.0])
def test_linear_in_control_reaches_corners(c):
    p = make(["u1"], "0")
    v, u = min_hamiltonian(p, 0.0, [0.0], [c])
    assert v == -abs(c) and u[0] == -math.copysign(1.0, c)
    v, u = max_hamiltonian(p, 0.0, [0.0], [c])
    assert v == abs(c) and u[0] == math.copysign(1.0, c)


def test_quadratic_minimum_against_finer_brute_force():
    p = make(["u1"], "u1^2", omega=ControlSet.interval(-1.0, 1.0, 401))
    v, u = min_hamiltonian(p, 0.0, [0.0], [1.0])
    fine = np.linspace(-1, 1, 4001)
    ref = np.min(fine + fine**2)
    assert abs(v - ref) <= (2 / 400) ** 2
    assert abs(u[0] + 0.5) <= 2 / 400


def test_ties_break_on_first_sample():
    p = make(["0"], "0")
    assert min_hamiltonian(p, 0.0, [0.0], [1.0])[1][0] == -1.0
    assert max_hamiltonian(p, 0.0, [0.0], [1.0])[1][0] == -1.0


P2 = make(["x2 + u1", "-x1 + u2*t"], "x1^2 + abs(u1 - x2) + u2",
          omega=ControlSet(box=((-1, 1), (0, 1)), samples_per_axis=5), delta=0.5)
finite = st.floats(-5, 5, allow_nan=False)
vec2 = st.tuples(finite, finite).map(np.array)


@settings(max_examples=60)
@given(st.floats(0, 5), vec2, vec2)
def test_min_le_every_sample_le_max(t, x, lam):
    lo, _ = min_hamiltonian(P2, t, x, lam)
    hi, _ = max_hamiltonian(P2, t, x, lam)
    for u in P2.omega.samples():
        h = eval_hamiltonian(P2, t, x, lam, u)
        assert lo <= h <= hi


@settings(max_examples=60)
@given(st.floats(0, 5), vec2, vec2, vec2)
def test_min_hamiltonian_is_midpoint_concave(t, x, l1, l2):
    mid = min_hamiltonian(P2, t, x, (l1 + l2) / 2)[0]
    avg = (min_hamiltonian(P2, t, x, l1)[0] + min_hamiltonian(P2, t, x, l2)[0]) / 2
    assert mid >= avg - 1e-12 * (1 + abs(avg))


@settings(max_examples=40)
@given(st.floats(0, 5), vec2, vec2, st.integers(-4, 4))
def test_scaling_cost_and_costate(t, x, lam, k):
    c = 2.0 ** k
    scaled = P2.with_constants(l=parse_expr(f"{c!r} * {pretty(P2.l)}", 2, 2))
    for u in P2.omega.samples():
        assert eval_hamiltonian(scaled, t, x, c * lam, u) == c * eval_hamiltonian(P2, t, x, lam, u)
    k0 = np.argmin([eval_hamiltonian(P2, t, x, lam, u) for u in P2.omega.samples()])
    assert np.array_equal(min_hamiltonian(scaled, t, x, c * lam)[1], P2.omega.samples()[k0])


# ---------------------------------------------------------------------- audits


def test_audit_affine_problem():
    p = make(["-x1 + u1"], "x1")
    rep = audit_assumptions(p, (0.0, 1.0), [(-1.0, 1.0)], sample_budget=2000)
    assert 0.99 <= rep.K1_f <= 1.0 + 1e-9
    assert 0.99 <= rep.K1_l <= 1.0 + 1e-9
    assert math.isclose(rep.K1, rep.K1_f + rep.K1_l)


def test_audit_zero_problem():
    p = make(["0"], "0", delta=0.1)
    rep = audit_assumptions(p, (0.0, 1.0), [(-1.0, 1.0)])
    assert rep.K1 == 0.0 and rep.K2 == 0.0
    assert rep.tilde_a6_sampled


def test_audit_singleton_is_convex():
    p = make(["x1 + u1"], "x1^2", omega=ControlSet(points=[[0.3]]))
    assert audit_assumptions(p, (0.0, 1.0), [(-1.0, 1.0)]).convexity == "convex"


def test_audit_budget_floor():
    with pytest.raises(ValueError):
        audit_assumptions(make(["u1"], "0"), (0, 1), [(-1, 1)], sample_budget=10)


# ---------------------------------------------------------------- horizon/tail


def test_horizon_for_constant_cost():
    p = make(["0"], "1", K2=1.0, M=0.0)
    assert math.isclose(horizon_for_target(p, 1e-3), math.log(1000))
    assert horizon_for_target(p, 1e-3, dt=0.01) == 6.91
    assert tail_bound(p, 6.91) <= 1e-3


@given(st.floats(1e-8, 1.0), st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0, 3))
def test_tail_at_horizon_meets_target(eps, delta, K2, M):
    p = make(["0"], "1", delta=delta, K2=K2, M=M)
    T = horizon_for_target(p, eps, dt=0.01)
    assert tail_bound(p, T) <= eps * (1 + 1e-9) or T == 0.01


# --------------------------------------------------------------- problem files

TEXT = """# bang-bang
name = demo
n = 1
m = 1
delta = 3
f.1 = u1
l = x1^2
omega.box = -1 1
omega.samples_per_axis = 3
K1 = 2
K2 = 1
invariant_radius = 1
claims_tilde_a6 = true
"""


def test_problem_file_round_trip(tmp_path):
    p = loads_problem(TEXT)
    assert p.delta == 3.0 and p.M == 1.0 and p.claims_tilde_a6 and p.name == "demo"
    text = dumps_problem(p)
    assert loads_problem(text) == p
    assert dumps_problem(loads_problem(text)) == text
    path = tmp_path / "p.txt"
    path.write_text(text)
    assert load_problem(path) == p
    assert problem_hash(p) == problem_hash(loads_problem(text))


def test_points_control_set_round_trip():
    p = make(["u1 + u2"], "x1", omega=ControlSet(points=[[0, 1], [1, 0.5]]))
    assert loads_problem(dumps_problem(p)) == p


@pytest.mark.parametrize("edit", [
    lambda s: s + "bogus = 1\n",
    lambda s: s + "n = 1\n",
    lambda s: s.replace("l = x1^2\n", ""),
    lambda s: s.replace("x1^2", "x1^^2"),
    lambda s: s.replace("f.1 = u1", "f.1 = u2"),
    lambda s: s.replace("delta = 3", "delta = three"),
    lambda s: s.replace("omega.box = -1 1", "omega.box = -1"),
    lambda s: s + "just words\n",
    lambda s: s.replace("delta = 3", "delta = 1"),
])
def test_problem_file_errors(edit):
    with pytest.raises(ProblemFileError):
        loads_problem(edit(TEXT))

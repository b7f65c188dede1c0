import math
import warnings

import numpy as np
import pytest

from infhjb.gradients import ExprField
from infhjb.problem import ControlProblem, ControlSet
from infhjb.trajectory import ControlSignal, certificate_from, integrate
from infhjb.value import extract_policy_rollout, make_grid, solve_value, total_budget
from infhjb.verify import (
    certify_optimal,
    classify_dini,
    constant_along,
    decay_check,
    equivalence_crosscheck,
    interior_points,
    monotonicity_check,
    random_admissible_process,
    sandwich,
)

UNIT = ControlSet.interval(-1.0, 1.0, 5)
BOX1 = ((0.0, math.inf), (-1.0,), (1.0,))


def make(f, l, delta=1.0, **kw):
    kw.setdefault("K2", 1.0)
    kw.setdefault("M", 1.0)
    return ControlProblem.from_strings(f, l, UNIT, delta, **kw)


def pts(n=15, seed=0):
    return interior_points(ExprField.parse("0", 1, BOX1), n, seed=seed, t_max=5.0)


# ---------------------------------------------------------------- classify


def test_zero_field_is_a_sub_solution_for_nonnegative_cost():
    p = make(["-x1 + u1"], "x1^2 + u1^2")
    v = classify_dini(ExprField.parse("0", 1, BOX1), p, pts())
    assert v.is_sub and v.classification in ("dini-sub", "dini-solution")


def test_large_exponential_is_not_a_sub_solution():
    p = make(["u1"], "1")
    phi = ExprField.parse("3 * exp(-t)", 1, BOX1)
    v = classify_dini(phi, p, pts())
    assert not v.sub_ok and v.is_super
    assert any(x["kind"] == "sub" for x in v.violations)


def test_exact_value_with_user_gradient_is_a_solution():
    p = make(["u1"], "1")
    phi = ExprField.parse("exp(-t)", 1, BOX1)
    v = classify_dini(phi, p, pts(), candidates=lambda pt: [np.array([-math.exp(-pt[0]), 0.0])])
    assert v.classification == "dini-solution"


def test_non_decaying_field_fails_the_decay_condition():
    p = make(["u1"], "1")
    v = classify_dini(ExprField.parse("1", 1, BOX1), p, pts())
    assert not v.decay.passed and v.classification == "neither"


# ------------------------------------------------------------------- decay


def test_decay_example():
    phi = ExprField.parse("exp(-t) * (1 + x1^2)", 1)
    rep = decay_check(phi, [[(-1.0, 1.0)]], [1.0, 5.0, 10.0, 20.0], 1e-3)
    assert rep.passed
    assert abs(rep.witness["sups"][2] - 2 * math.exp(-10)) < 1e-15


def test_constant_does_not_decay():
    assert not decay_check(ExprField.parse("1", 1), [[(-1.0, 1.0)]], [1.0, 5.0, 10.0], 1e-3).passed


def test_solved_field_decays(solved):
    vf = solved("bang-bang-quadratic")
    T = vf.grid.T
    assert decay_check(vf.extended(), [[(-1.0, 1.0)]], [T / 2, T, 2 * T], vf.terminal_bound).passed


# ------------------------------------------------------------ monotonicity


def test_zero_everything_passes_both_modes():
    p = make(["u1"], "0")
    u = ControlSignal.constant(0.0, [0.5])
    tr = integrate(p, u, 0.0, [0.0], 1.0, 0.05)
    cert = certificate_from(p, tr)
    zero = ExprField.parse("0", 1, BOX1)
    assert monotonicity_check(zero, p, (u, tr), cert).passed
    assert monotonicity_check(zero, p, (u, tr), cert, mode="non-increasing").passed


def test_non_optimal_process_strictly_increases(solved):
    vf = solved("bang-bang-quadratic")
    p = vf.problem
    u = ControlSignal.constant(0.0, [0.0])
    tr = integrate(p, u, 0.0, [0.5], vf.grid.T, vf.grid.dt)
    cert = certificate_from(p, tr)
    assert monotonicity_check(vf, p, (u, tr), cert).passed
    assert not constant_along(vf, p, (u, tr), cert).passed
    assert not monotonicity_check(vf, p, (u, tr), cert, mode="non-increasing").passed


def test_random_processes_are_admissible_and_stay_inside():
    p = make(["u1 - x1"], "x1^2")
    u, tr, _ = random_admissible_process(p, 0.5, [0.2], 3.0, seed=4)
    assert u.is_admissible(p.omega)
    assert np.max(np.abs(tr.x)) <= 1.0
    again = random_admissible_process(p, 0.5, [0.2], 3.0, seed=4)[0]
    assert again == u


# ------------------------------------------------------------- certificates


def test_certify_zero_problem():
    p = make(["u1"], "0")
    zero = ExprField.parse("0", 1, BOX1)
    verdict = classify_dini(zero, p, pts(5))
    u = ControlSignal.constant(0.0, [0.5])
    tr = integrate(p, u, 0.0, [0.0], 1.0, 0.05)
    assert certify_optimal(zero, p, (u, tr), certificate_from(p, tr), verdict).passed


def test_certify_bang_bang(solved):
    vf = solved("bang-bang-quadratic")
    p = vf.problem
    verdict = classify_dini(vf, p, interior_points(vf, 20, seed=1))
    sig, tr, cert = extract_policy_rollout(vf, p, 0.0, [0.8])
    assert certify_optimal(vf, p, (sig, tr), cert, verdict).passed
    u = ControlSignal.constant(0.0, [0.0])
    tr0 = integrate(p, u, 0.0, [0.8], vf.grid.T, vf.grid.dt / 2)
    rep = certify_optimal(vf, p, (u, tr0), certificate_from(p, tr0), verdict)
    assert not rep.passed and rep.details["gap"] > 3 * rep.budget["tolerance"]


def test_certify_needs_a_sub_solution(solved):
    vf = solved("constant-cost")
    p = vf.problem
    bad = classify_dini(ExprField.parse("1", 1, BOX1), p, pts(3))
    sig, tr, cert = extract_policy_rollout(vf, p, 0.0, [0.0])
    with pytest.raises(ValueError):
        certify_optimal(vf, p, (sig, tr), cert, bad)


# ----------------------------------------------------------------- sandwich


def test_sandwich_bounds_and_empty_side(solved):
    vf = solved("time-varying-drift")
    p = vf.problem
    dom = ((0.0, math.inf), vf.grid.lo, vf.grid.hi)
    zero = ExprField.parse("0", 1, dom)
    upper = ExprField.parse(f"{p.K2 * (1 + p.M) / p.delta!r} * exp(-{p.delta!r}*t)", 1, dom)
    probe = interior_points(vf, 20, seed=5)
    vz, vu = classify_dini(zero, p, probe), classify_dini(upper, p, probe)
    bounds = sandwich([(zero, vz)], [(upper, vu)], p, probe, vf=vf, tol=total_budget(vf))
    assert all(b.consistent for b in bounds)
    assert all(b.lower == 0.0 and b.upper > b.lower for b in bounds)
    open_top = sandwich([(zero, vz)], [], p, probe[:3])
    assert all(b.upper == math.inf and b.lower == 0.0 for b in open_top)
    assert open_top[0].to_dict()["upper"] == math.inf


def test_sandwich_collapses_on_the_same_field(solved):
    vf = solved("bang-bang-quadratic")
    p = vf.problem
    probe = interior_points(vf, 20, seed=6)
    verdict = classify_dini(vf, p, probe)
    bounds = sandwich([(vf, verdict)], [(vf, verdict)], p, probe, vf=vf)
    assert all(b.width == 0.0 and b.consistent for b in bounds)


def test_sandwich_drops_unverified_fields():
    p = make(["u1"], "1")
    big = ExprField.parse("3 * exp(-t)", 1, BOX1)
    verdict = classify_dini(big, p, pts(5))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        bounds = sandwich([(big, verdict)], [], p, pts(2))
    assert caught and bounds[0].lower == -math.inf


# -------------------------------------------------------------- equivalence


def test_equivalence_at_the_kink():
    p = make(["0"], "1", delta=0.5)
    phi = ExprField.parse("abs(x1)", 1, BOX1)
    rep = equivalence_crosscheck(phi, p, [(1.0, np.array([0.0]))])
    assert rep.passed
    verdicts = rep.details["rows"][0]["verdicts"]
    # |x1| has no Dini super-gradient at 0, so the Dini side holds vacuously
    assert verdicts["dini"]["sub"] == "vacuous"
    assert {verdicts[f]["sub"] for f in ("proximal", "viscosity")} <= {"compatible", "vacuous"}


def test_equivalence_on_a_smooth_field():
    p = make(["u1"], "1")
    phi = ExprField.parse("exp(-t) + 0.1 * x1^2", 1, BOX1)
    assert equivalence_crosscheck(phi, p, pts(6)).passed


def test_injected_disagreement_is_flagged(solved):
    vf = solved("bang-bang-quadratic")
    probe = interior_points(vf, 5, seed=2)
    rep = equivalence_crosscheck(vf, vf.problem, probe, hjb_tol={"viscosity": 0.0})
    assert not rep.passed and rep.details["disagreements"]


# --------------------------------------------------------------- uniqueness


def test_independent_grids_agree_within_budgets(solved):
    fine = solved("time-varying-drift")
    p = fine.problem
    other = solve_value(p, make_grid(p, [(-1.0, 1.0)], 151, 0.008, eps=1e-4, interpolation="pchip"))
    probe = interior_points(fine, 50, seed=7, t_max=min(fine.grid.T, other.grid.T))
    ts = np.array([q[0] for q in probe])
    xs = np.array([q[1] for q in probe])
    gap = np.max(np.abs(fine(ts, xs) - other(ts, xs)))
    assert gap <= total_budget(fine) + total_budget(other)

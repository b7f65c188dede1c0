import math

import numpy as np
import pytest
from scipy.integrate import quad

from infhjb.bench import NAMES, bang_bang_value, benchmark, drift_reference, reference_dp, run_benchmark
from infhjb.problem import audit_assumptions


def test_registry():
    assert NAMES == ("constant-cost", "pure-discount-control", "bang-bang-quadratic", "time-varying-drift")
    with pytest.raises(KeyError):
        benchmark("nope")
    assert benchmark("constant-cost") is benchmark("constant-cost")


def test_constant_cost_oracle():
    assert benchmark("constant-cost").oracle(0.0, np.array([[0.3]]))[0] == 1.0


def test_bang_bang_oracle_values():
    assert bang_bang_value(0.0) == 0.0
    closed = 5 / 27 - (2 / 27) * math.exp(-3)
    assert math.isclose(float(bang_bang_value(1.0)), closed, rel_tol=1e-14)
    assert abs(closed - 0.1815) < 1e-4
    for z in (0.3, 0.8, 1.0):
        ref, _ = quad(lambda t: math.exp(-3 * t) * (z - t) ** 2, 0, z)
        assert math.isclose(float(bang_bang_value(z)), ref, rel_tol=1e-10)
    assert bang_bang_value(-0.4) == bang_bang_value(0.4)
    assert math.isclose(float(bang_bang_value(0.5, tau=1.0)), math.exp(-3) * float(bang_bang_value(0.5)))


@pytest.mark.parametrize("name", NAMES)
def test_declared_constants_cover_the_audit(name):
    b = benchmark(name)
    p = b.problem
    rep = audit_assumptions(p, *b.region, sample_budget=4000)
    assert rep.K1 <= p.K1 + 1e-6
    assert rep.K2 <= p.K2 + 1e-9
    assert rep.tilde_a6_declared == p.claims_tilde_a6


def test_drift_benchmark_sits_on_the_boundary():
    b = benchmark("time-varying-drift")
    rep = audit_assumptions(b.problem, *b.region, sample_budget=4000)
    assert b.problem.delta - rep.K1 < 1e-2  # the sampled sum approaches delta, so no claim is made
    assert not b.problem.claims_tilde_a6


def test_reference_dp_reproduces_the_closed_form():
    xs, v = reference_dp(lambda t, x, u: 0 * x + u, lambda t, x, u: x * x + 0 * u, 3.0,
                         np.linspace(-1, 1, 21), -1.0, 1.0, 201, 0.005, 5.0)
    assert np.max(np.abs(v - bang_bang_value(xs))) < 1e-5


def test_drift_reference_is_self_consistent():
    values, gap = drift_reference(np.array([0.0, 0.5, 1.0]))
    assert gap < 1e-5
    assert np.all(values >= -gap) and values[2] > values[1] > values[0]


@pytest.mark.parametrize("name", ["constant-cost", "pure-discount-control"])
def test_quick_benchmarks_pass(name):
    out = run_benchmark(name)
    assert out["pass"] and out["max_rel_err"] <= 5e-3
    assert set(out) == {"name", "grid", "max_abs_err", "max_rel_err", "budget", "pass"}

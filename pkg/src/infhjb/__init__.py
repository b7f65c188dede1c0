"""Infinite-horizon discounted optimal control toolkit."""

from .errors import (
    CertificateRefused,
    ExprDomainError,
    ExprSyntaxError,
    IntegrationError,
    OutOfDomainError,
    ProblemFileError,
    SolveError,
)
from .expr import parse_expr, pretty
from .problem import (
    ControlProblem,
    ControlSet,
    audit_assumptions,
    horizon_for_target,
    load_problem,
    loads_problem,
    max_hamiltonian,
    min_hamiltonian,
    tail_bound,
)
from .trajectory import ControlSignal, CostCertificate, Trajectory, certificate_from, check_gronwall, integrate
from .value import Grid, ValueField, extract_policy_rollout, make_grid, solve_value
from .gradients import ExprField, FunctionField, RadiusSchedule, dini_subgradient_test, dini_supergradient_test
from .verify import certify_optimal, classify_dini, equivalence_crosscheck, sandwich

__all__ = [name for name in dir() if not name.startswith("_")]

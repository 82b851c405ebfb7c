"""Finite-difference verification of analytic gradients."""

from trans2unet.gradcheck.harness import GradCheckResult, check_gradients, relative_error
from trans2unet.gradcheck.suites import (
    SUITES,
    GradCheckSuite,
    require_passing,
    resolve_suites,
    run_suite,
    run_suites,
    suite_names,
)

__all__ = [
    "SUITES",
    "GradCheckResult",
    "GradCheckSuite",
    "check_gradients",
    "relative_error",
    "require_passing",
    "resolve_suites",
    "run_suite",
    "run_suites",
    "suite_names",
]

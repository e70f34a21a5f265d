"""steerkit: detection-loophole-free quantum steering bounds and simulation.

Core pieces:

* :mod:`steerkit.quantum` -- exact two-qubit algebra (states, observables,
  correlators, the ideal steering parameter).
* :mod:`steerkit.measurements` -- phase-encoding and Platonic measurement
  families plus the complementary-settings map.
* :mod:`steerkit.lhs` -- loss-counted local-hidden-state membership by
  convex optimization, critical p*(epsilon) / epsilon*(p) bounds, dual
  certificates with exhaustive verification, brute-force oracles.
* :mod:`steerkit.experiment` -- seeded Monte-Carlo model of the time-bin
  fiber experiment with Klyshko-efficiency and S_n estimators and the
  final pass/fail verdict.
* :mod:`steerkit.cli` -- the `steerkit` command-line tool.
"""

__version__ = "0.1.0"

from .errors import (CalibrationError, EstimateError, SolverFailure,
                     VerdictUnavailable)
from .quantum import (IsotropicParams, SteeringEstimate, correlation,
                      conditional_state, expected_steering_parameter,
                      isotropic_state, sigma_theta)
from .measurements import (Measurement, MeasurementSet, complementary_settings,
                           custom_set, phase_encoding_set, platonic_set)
from .lhs import (Assemblage, BoundPoint, Certificate, LhsDecision,
                  bound_curve, build_test_assemblage, critical_epsilon,
                  critical_p, enumerate_strategies, lhs_membership,
                  lossless_lhs_bound, verify_certificate)
from .experiment import (ExperimentConfig, ExperimentResult, HistogramSet,
                         KlyshkoEstimate, TestVerdict, calibrate_phase,
                         estimate_klyshko, estimate_steering, run_experiment,
                         simulate_run, total_efficiency, verdict)

__all__ = [
    "__version__",
    "Assemblage", "BoundPoint", "CalibrationError", "Certificate",
    "EstimateError", "ExperimentConfig", "ExperimentResult", "HistogramSet",
    "IsotropicParams", "KlyshkoEstimate", "LhsDecision", "Measurement",
    "MeasurementSet", "SolverFailure", "SteeringEstimate", "TestVerdict",
    "VerdictUnavailable", "bound_curve", "build_test_assemblage",
    "calibrate_phase", "complementary_settings", "conditional_state",
    "correlation", "critical_epsilon", "critical_p", "custom_set",
    "enumerate_strategies", "estimate_klyshko", "estimate_steering",
    "expected_steering_parameter", "isotropic_state", "lhs_membership",
    "lossless_lhs_bound", "phase_encoding_set", "platonic_set",
    "run_experiment", "sigma_theta", "simulate_run", "total_efficiency",
    "verdict", "verify_certificate",
]

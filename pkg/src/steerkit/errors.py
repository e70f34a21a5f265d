"""Exception types shared across the toolkit.

Invalid arguments raise plain ValueError everywhere; the classes below mark
failure modes a caller may want to handle distinctly (solver breakdown,
estimators on degenerate data, calibration that cannot bracket its target).
"""


class SolverFailure(RuntimeError):
    """An SDP/SOCP solve did not reach an optimal certificate.

    Carries whatever diagnostics the solver exposed; never returned as a
    silently wrong answer.
    """

    def __init__(self, message, status=None, diagnostics=None):
        super().__init__(message)
        self.status = status
        self.diagnostics = diagnostics or {}


class EstimateError(ValueError):
    """An estimator was asked to divide by an empty bucket."""


class CalibrationError(RuntimeError):
    """Phase calibration could not bracket its target value."""


class VerdictUnavailable(RuntimeError):
    """The steering verdict could not be computed (bound solve failed)."""

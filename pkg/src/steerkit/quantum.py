"""Exact two-qubit algebra: states, observables, correlators.

Conventions used throughout the package:

* Qubit basis: |0> = early time bin, |1> = late time bin, so the sigma_z
  eigenbasis is the time basis and equatorial directions are phase settings.
* Tensor ordering: Alice's qubit is always the first factor of a 4x4
  operator, Bob's the second.
* Operators are plain complex numpy arrays (2x2 or 4x4); the validators in
  this module enforce Hermiticity and, where relevant, positivity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ATOL = 1e-10  # default tolerance for algebraic identities

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
ID2 = np.eye(2, dtype=complex)


def require_hermitian(m, name="operator", tol=1e-12):
    """Validate a square complex matrix of dim 2 or 4 is Hermitian."""
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] not in (2, 4):
        raise ValueError(f"{name} must be a 2x2 or 4x4 matrix, got shape {m.shape}")
    if not np.allclose(m, m.conj().T, atol=tol):
        raise ValueError(f"{name} is not Hermitian within {tol}")
    return m


def require_density_matrix(rho, name="rho", tol=1e-9):
    rho = require_hermitian(rho, name)
    if abs(np.trace(rho).real - 1.0) > 1e-9:
        raise ValueError(f"{name} must have unit trace")
    if np.linalg.eigvalsh(rho).min() < -tol:
        raise ValueError(f"{name} is not positive semidefinite")
    return rho


def require_pm_observable(obs, name="observable", tol=1e-9):
    """Validate a 2x2 Hermitian observable with eigenvalues +-1."""
    obs = require_hermitian(obs, name)
    if obs.shape != (2, 2):
        raise ValueError(f"{name} must be 2x2")
    if not np.allclose(obs @ obs, ID2, atol=tol):
        raise ValueError(f"{name} must square to the identity (eigenvalues +-1)")
    return obs


def bloch_observable(direction):
    """Hermitian +-1 observable n . sigma for a unit Bloch vector n."""
    n = np.asarray(direction, dtype=float)
    if n.shape != (3,) or abs(np.linalg.norm(n) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit 3-vector")
    return n[0] * PAULI_X + n[1] * PAULI_Y + n[2] * PAULI_Z


def sigma_theta(theta):
    """Equatorial observable cos(theta) sigma_x + sin(theta) sigma_y.

    This is the measurement realised by an interferometer with differential
    phase delay theta; it is traceless and squares to the identity.
    """
    if not np.isfinite(theta):
        raise ValueError("theta must be finite")
    return np.cos(theta) * PAULI_X + np.sin(theta) * PAULI_Y


@dataclass(frozen=True)
class IsotropicParams:
    """Two-qubit isotropic state family parameters.

    p is the weight of the maximally entangled component, alpha the relative
    phase of its |11> amplitude.  alpha is clamped to [0, pi] here as a
    convenience; the state constructor itself accepts any finite phase.
    """

    p: float
    alpha: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if not (0.0 <= self.alpha <= np.pi):
            raise ValueError(f"alpha must lie in [0, pi], got {self.alpha}")


def entangled_ket(alpha):
    """|Psi(alpha)> = (|00> + e^{i alpha} |11>)/sqrt(2) as a length-4 vector."""
    if not np.isfinite(alpha):
        raise ValueError("alpha must be finite")
    ket = np.zeros(4, dtype=complex)
    ket[0] = 1.0
    ket[3] = np.exp(1j * alpha)
    return ket / np.sqrt(2.0)


def isotropic_state(params):
    """Density matrix p |Psi(alpha)><Psi(alpha)| + (1-p) I/4."""
    if not isinstance(params, IsotropicParams):
        raise TypeError("isotropic_state expects IsotropicParams")
    ket = entangled_ket(params.alpha)
    return params.p * np.outer(ket, ket.conj()) + (1.0 - params.p) * np.eye(4) / 4.0


def partial_trace_alice(m4):
    """Trace out the first (Alice) factor of a 4x4 operator."""
    m4 = np.asarray(m4, dtype=complex)
    return m4.reshape(2, 2, 2, 2).trace(axis1=0, axis2=2)


def partial_trace_bob(m4):
    """Trace out the second (Bob) factor of a 4x4 operator."""
    m4 = np.asarray(m4, dtype=complex)
    return m4.reshape(2, 2, 2, 2).trace(axis1=1, axis2=3)


def correlation(rho, obs_a, obs_b):
    """Tr[rho (A tensor B)] for +-1-valued observables; real and in [-1, 1]."""
    rho = require_density_matrix(rho)
    if rho.shape != (4, 4):
        raise ValueError("rho must be 4x4")
    obs_a = require_pm_observable(obs_a, "obs_a")
    obs_b = require_pm_observable(obs_b, "obs_b")
    value = np.trace(rho @ np.kron(obs_a, obs_b))
    if abs(value.imag) > ATOL:
        raise ValueError(f"correlation has imaginary part {value.imag:g}")
    return float(np.clip(value.real, -1.0, 1.0))


def conditional_state(rho, projector_a):
    """Bob's subnormalized state Tr_A[(P_a tensor I) rho] after Alice's outcome.

    The trace of the result is the probability of that outcome.
    """
    rho = require_density_matrix(rho)
    if rho.shape != (4, 4):
        raise ValueError("rho must be 4x4")
    proj = require_hermitian(projector_a, "projector_a")
    if proj.shape != (2, 2):
        raise ValueError("projector_a must be 2x2")
    if not np.allclose(proj @ proj, proj, atol=1e-9):
        raise ValueError("projector_a must be idempotent")
    return partial_trace_alice(np.kron(proj, ID2) @ rho)


@dataclass(frozen=True)
class SteeringEstimate:
    """Steering parameter S_n: the mean of n two-party correlators.

    per_setting holds the individual correlators; std_err / per_setting_err
    are attached by the experiment estimators and stay None for exact values.
    """

    value: float
    per_setting: tuple
    n: int
    std_err: float | None = None
    per_setting_err: tuple | None = None

    def __post_init__(self):
        if self.n != len(self.per_setting):
            raise ValueError("n must equal len(per_setting)")
        if abs(self.value - float(np.mean(self.per_setting))) > 1e-12:
            raise ValueError("value must be the mean of per_setting")
        for e in self.per_setting:
            if not (-1.0 - 1e-12 <= e <= 1.0 + 1e-12):
                raise ValueError("correlators must lie in [-1, 1]")


def expected_steering_parameter(params, settings, alice, visibility=1.0):
    """Ideal steering parameter for an isotropic state and paired settings.

    settings are Bob's measurements, alice the announcing party's matched
    observables.  A finite interference visibility multiplies the equatorial
    (phase-basis) correlators only; the time-basis correlator is left exact,
    since interferometer contrast does not affect arrival-time statistics.
    With matched complementary settings and visibility 1 the result equals p.
    """
    if not isinstance(params, IsotropicParams):
        raise TypeError("expected_steering_parameter expects IsotropicParams")
    if len(settings.measurements) != len(alice.measurements):
        raise ValueError("settings and alice must have the same length")
    if not (0.0 <= visibility <= 1.0):
        raise ValueError("visibility must lie in [0, 1]")
    rho = isotropic_state(params)
    per = []
    for m_bob, m_alice in zip(settings.measurements, alice.measurements):
        e = correlation(rho, m_alice.observable(), m_bob.observable())
        if m_bob.kind == "phase_basis":
            e *= visibility
        per.append(e)
    per = tuple(per)
    return SteeringEstimate(value=float(np.mean(per)), per_setting=per, n=len(per))

"""Loss-counted local-hidden-state membership via convex optimization.

The decision problem: can the conditional-state collection ("assemblage")
Bob reconstructs from Alice's announcements be written as

    sigma_{a|k} = sum_lambda D_lambda(a|k) sigma_lambda,   sigma_lambda >= 0,

where lambda runs over deterministic response strategies assigning one of
{+1, -1, null} to each of the n settings?  If yes, the correlations admit a
local-hidden-state explanation and no steering is certified; if no, an
explicit dual functional proves it, and the proof is re-checked here by
exhaustive enumeration, independent of any solver internals.

Losses are counted, not postselected: a strategy may answer null, and the
null member of the test assemblage is the maximally mixed state with weight
(1 - epsilon) for every setting, so that inconclusive rounds carry zero
correlation.  This reproduces the epsilon > 1/n faking threshold.

Numerics: every unknown is a 2x2 Hermitian block stored as four reals
(diag, Re/Im off-diag); positivity of such a block is exactly a rotated
second-order-cone constraint (trace >= 0 and det >= 0), so the programs are
solved as SOCPs with an interior-point solver.  For n <= 7 the full 3^n
strategy set is used directly; for larger n restricted sets are grown by
row generation until the dual functional is feasible for all 3^n blocks.
"""

from __future__ import annotations

import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import cvxpy as cp

from .errors import SolverFailure
from .measurements import MeasurementSet, phase_encoding_set, platonic_set
from .quantum import ID2, PAULI_X, PAULI_Y, PAULI_Z, IsotropicParams

NULL = 0
OUTCOMES = (1, -1, NULL)            # lexicographic outcome order
_OUT_INDEX = {1: 0, -1: 1, NULL: 2}  # row/array index per outcome

MAX_STRATEGY_SETTINGS = 12
FULL_SOLVE_MAX_N = 7

DEFAULT_GAP_TOL = 1e-7
CERT_TOL = 1e-8
PSD_SLACK = 1e-9
BISECT_WIDTH = 1e-5

_SIGMA = (PAULI_X, PAULI_Y, PAULI_Z)


# ---------------------------------------------------------------------------
# strategies

def enumerate_strategies(n):
    """All 3^n deterministic response strategies, lexicographic in (+1,-1,null)."""
    if not isinstance(n, (int, np.integer)) or not (1 <= n <= MAX_STRATEGY_SETTINGS):
        raise ValueError(
            f"n must be an integer in [1, {MAX_STRATEGY_SETTINGS}], got {n}")
    return list(itertools.product(OUTCOMES, repeat=n))


def _strategy_indices(n):
    """(3^n, n) int8 array of outcome indices (0:+1, 1:-1, 2:null)."""
    if not (1 <= n <= MAX_STRATEGY_SETTINGS):
        raise ValueError(f"n out of range: {n}")
    return np.array(list(itertools.product((0, 1, 2), repeat=n)), dtype=np.int8)


def _seed_strategies(n):
    """Initial restricted set: all-null, all 2^n null-free, 2n single-setting."""
    rows = [np.full(n, 2, dtype=np.int8)]
    for bits in itertools.product((0, 1), repeat=n):
        rows.append(np.array(bits, dtype=np.int8))
    for k in range(n):
        for ai in (0, 1):
            s = np.full(n, 2, dtype=np.int8)
            s[k] = ai
            rows.append(s)
    return np.unique(np.array(rows, dtype=np.int8), axis=0)


# ---------------------------------------------------------------------------
# 2x2 Hermitian <-> real 4-vector (x, y, z, w): M = [[x, z-iw], [z+iw, y]]

def _vec4(m):
    m = np.asarray(m, dtype=complex)
    return np.array([m[0, 0].real, m[1, 1].real, m[0, 1].real, -m[0, 1].imag])


def _unvec4(v):
    x, y, z, w = v
    return np.array([[x, z - 1j * w], [z + 1j * w, y]], dtype=complex)


def _min_eig_vec4(v):
    """Closed-form smallest eigenvalue of the 2x2 Hermitian encoded by v.

    v may have shape (..., 4); returns shape (...).
    """
    x, y, z, w = v[..., 0], v[..., 1], v[..., 2], v[..., 3]
    tr = x + y
    det = x * y - z * z - w * w
    disc = np.maximum(tr * tr - 4.0 * det, 0.0)
    return (tr - np.sqrt(disc)) / 2.0


# ---------------------------------------------------------------------------
# assemblages

@dataclass(frozen=True)
class Assemblage:
    """Subnormalized conditional states {sigma_{a|k}} on the trusted side.

    members maps (outcome, setting) -> 2x2 Hermitian PSD matrix, with
    outcome in {+1, -1, 0} (0 = null/no-click).  The conclusive weight is
    epsilon for every setting; null members absorb the rest.
    """

    n: int
    epsilon: float
    members: dict

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        reduced = None
        for k in range(self.n):
            total = np.zeros((2, 2), dtype=complex)
            concl = 0.0
            for a in OUTCOMES:
                m = np.asarray(self.members[(a, k)], dtype=complex)
                if m.shape != (2, 2) or not np.allclose(m, m.conj().T, atol=1e-9):
                    raise ValueError(f"member ({a},{k}) is not 2x2 Hermitian")
                if _min_eig_vec4(_vec4(m)) < -PSD_SLACK:
                    raise ValueError(f"member ({a},{k}) is not PSD")
                total = total + m
                if a != NULL:
                    concl += float(np.trace(m).real)
            if abs(concl - self.epsilon) > 1e-9:
                raise ValueError(
                    f"conclusive weight at setting {k} is {concl:.3e}, "
                    f"expected epsilon={self.epsilon:.3e}")
            if reduced is None:
                reduced = total
            elif not np.allclose(total, reduced, atol=1e-9):
                raise ValueError(f"no-signaling violated at setting {k}")

    @property
    def reduced_state(self):
        return sum(np.asarray(self.members[(a, 0)], dtype=complex)
                   for a in OUTCOMES)

    def target_rows(self):
        """Real-parameterized targets for rows (+,k) k<n, (-,k) k<n, (null,0)."""
        t = np.zeros((2 * self.n + 1, 4))
        for k in range(self.n):
            t[k] = _vec4(self.members[(1, k)])
            t[self.n + k] = _vec4(self.members[(-1, k)])
        t[2 * self.n] = _vec4(self.members[(NULL, 0)])
        return t


def _conclusive_blocks(settings, p):
    """vec4 of (1/4)(I +- p n_k.sigma) for every setting and sign."""
    dirs = settings.bloch_matrix()
    n = settings.n
    plus = np.zeros((n, 4))
    minus = np.zeros((n, 4))
    for k in range(n):
        nd = sum(dirs[k, i] * _SIGMA[i] for i in range(3))
        plus[k] = _vec4((ID2 + p * nd) / 4.0)
        minus[k] = _vec4((ID2 - p * nd) / 4.0)
    return plus, minus


def build_test_assemblage(params, epsilon, settings):
    """Assemblage Bob holds in the honest loss-counted test.

    Conclusive members are epsilon times the states steered by Alice's
    matched (complementary) measurements on the isotropic state, which for a
    unit direction n_k come out as (epsilon/4)(I +- p n_k.sigma); the null
    member is the maximally mixed state with weight (1 - epsilon).
    """
    if not isinstance(params, IsotropicParams):
        raise TypeError("build_test_assemblage expects IsotropicParams")
    if not (0.0 <= epsilon <= 1.0):
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    plus, minus = _conclusive_blocks(settings, params.p)
    members = {}
    for k in range(settings.n):
        members[(1, k)] = epsilon * _unvec4(plus[k])
        members[(-1, k)] = epsilon * _unvec4(minus[k])
        members[(NULL, k)] = (1.0 - epsilon) * ID2 / 2.0
    return Assemblage(n=settings.n, epsilon=float(epsilon), members=members)


# ---------------------------------------------------------------------------
# certificates

@dataclass(frozen=True)
class Certificate:
    """Steering functional {F_{a|k}} witnessing non-membership.

    Valid when (i) sum_k F_{lambda(k)|k} is PSD for every deterministic
    strategy and (ii) sum_{a,k} Tr[F_{a|k} sigma_{a|k}] is strictly negative
    on the assemblage under test; together these exclude any LHS model.
    operators is a (3, n, 4) real array in the (x, y, z, w) block encoding,
    outcome axis ordered (+1, -1, null).
    """

    n: int
    operators: np.ndarray
    violation: float

    def matrix(self, outcome, setting):
        return _unvec4(self.operators[_OUT_INDEX[outcome], setting])

    def pairing(self, assemblage):
        """sum_{a,k} Tr[F_{a|k} sigma_{a|k}] (the value tested in (ii))."""
        total = 0.0
        for a in OUTCOMES:
            for k in range(self.n):
                f = self.operators[_OUT_INDEX[a], k]
                s = _vec4(assemblage.members[(a, k)])
                total += f[0] * s[0] + f[1] * s[1] + 2.0 * (f[2] * s[2] + f[3] * s[3])
        return total

    def to_doc(self):
        return {
            "n": self.n,
            "violation": self.violation,
            "encoding": "per (outcome, setting): [M00, M11, Re M01, -Im M01]",
            "outcome_order": ["+1", "-1", "null"],
            "operators": self.operators.tolist(),
        }

    @classmethod
    def from_doc(cls, doc):
        ops = np.asarray(doc["operators"], dtype=float)
        return cls(n=int(doc["n"]), operators=ops, violation=float(doc["violation"]))


def _strategy_block_mins(operators, strat_idx, chunk=200_000):
    """lambda_min of sum_k F_{lambda(k)|k} for each strategy row (vectorized)."""
    n = operators.shape[1]
    cols = np.arange(n)[None, :]
    mins = np.empty(strat_idx.shape[0])
    for lo in range(0, strat_idx.shape[0], chunk):
        part = strat_idx[lo:lo + chunk]
        summed = operators[part, cols, :].sum(axis=1)
        mins[lo:lo + chunk] = _min_eig_vec4(summed)
    return mins


def _repair_operators(ops, strat_idx):
    """Shift a noisy dual functional back onto the exact feasible side.

    Adding c I to every outcome's operator at one setting shifts each
    strategy block by c I (exactly one outcome per setting enters a block)
    and the assemblage pairing by c (the full members at a setting have unit
    trace).  Shifting all n settings by (-worst)/n therefore restores block
    positivity while moving the violation by only |worst|, which is at the
    solver-noise scale.
    """
    worst = float(_strategy_block_mins(ops, strat_idx).min())
    if worst >= 0.0:
        return ops, 0.0
    shift = -worst / ops.shape[1]
    repaired = ops.copy()
    repaired[:, :, 0] += shift
    repaired[:, :, 1] += shift
    return repaired, -worst


def verify_certificate(certificate, assemblage, tol=CERT_TOL):
    """Exhaustively check a steering functional against an assemblage.

    Returns True iff sum_k F_{lambda(k)|k} >= -tol * I for all 3^n
    strategies and the pairing with the assemblage is below -tol.  A True
    answer proves the assemblage has no LHS model regardless of how the
    functional was produced.
    """
    if certificate.n != assemblage.n:
        raise ValueError("certificate and assemblage dimension mismatch")
    strat_idx = _strategy_indices(certificate.n)
    if _strategy_block_mins(certificate.operators, strat_idx).min() < -tol:
        return False
    return certificate.pairing(assemblage) < -tol


# ---------------------------------------------------------------------------
# shared SOCP machinery

def _selection_matrix(n, strat_idx):
    """Sparse 0/1 matrix: rows (+,k) k<n, (-,k) k<n, (null,0); cols strategies."""
    rows = []
    cols = []
    for k in range(n):
        for ai, base in ((0, 0), (1, n)):
            hit = np.where(strat_idx[:, k] == ai)[0]
            rows.append(np.full(hit.size, base + k))
            cols.append(hit)
    hit = np.where(strat_idx[:, 0] == 2)[0]
    rows.append(np.full(hit.size, 2 * n))
    cols.append(hit)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    data = np.ones(rows.size)
    return sp.csr_matrix((data, (rows, cols)), shape=(2 * n + 1, strat_idx.shape[0]))


def _psd_soc(X, shift=None):
    """SOC encoding of 2x2 PSD for every row of X = (x, y, z, w) blocks."""
    t = X[:, 0] + X[:, 1]
    if shift is not None:
        t = t - 2.0 * shift
    return cp.SOC(t, cp.vstack([2.0 * X[:, 2], 2.0 * X[:, 3], X[:, 0] - X[:, 1]]),
                  axis=0)


def _solver_kwargs(tol):
    t = float(np.clip(tol * 0.1, 1e-12, 1e-8))
    return dict(tol_gap_abs=t, tol_gap_rel=t, tol_feas=t)


def _run(prob, tol, what, reduced_accuracy_ok=False):
    """Solve with the interior-point solver, retrying once on low accuracy.

    A reduced-accuracy exit is retried with relaxed tolerances; it is only
    accepted (when the caller says so) where downstream checks arbitrate the
    answer independently -- the membership decision re-validates any claimed
    model against a 1e-7 reconstruction residual and any claimed certificate
    against the exhaustive strategy scan, so a sloppy solve can never turn
    into a silently wrong result.
    """
    try:
        prob.solve(solver=cp.CLARABEL, **_solver_kwargs(tol))
        if prob.status == cp.OPTIMAL_INACCURATE:
            prob.solve(solver=cp.CLARABEL, max_iter=500,
                       **_solver_kwargs(tol * 100))
    except cp.error.SolverError as exc:
        raise SolverFailure(f"{what}: solver error: {exc}") from exc
    acceptable = (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) if reduced_accuracy_ok \
        else (cp.OPTIMAL,)
    if prob.status not in acceptable:
        raise SolverFailure(
            f"{what}: solver finished with status {prob.status}",
            status=prob.status,
            diagnostics={"solve_time": getattr(prob.solver_stats, "solve_time", None),
                         "num_iters": getattr(prob.solver_stats, "num_iters", None)})
    return prob


def _dual_operators(n, Y):
    """Map equality-row duals to a (3, n, 4) functional array (nulls k>0 zero).

    Constraint rows are componentwise in the (x, y, z, w) encoding, so the
    dual row y acts as y . vec4(sigma); the Hermitian functional with
    Tr[F sigma] equal to that has vec4(F) = (y0, y1, y2/2, y3/2).
    """
    ops = np.zeros((3, n, 4))
    ops[0, :, :] = Y[:n]
    ops[1, :, :] = Y[n:2 * n]
    ops[2, 0, :] = Y[2 * n]
    ops[:, :, 2] *= 0.5
    ops[:, :, 3] *= 0.5
    return ops


def _solve_membership_restricted(n, strat_idx, targets, tol):
    """max t  s.t.  sum_lambda D sigma = targets,  sigma_lambda >= t I.

    t >= 0 iff the (restricted) decomposition exists; the equality duals give
    the steering functional when t < 0.  Always feasible for no-signaling
    targets, so strong duality applies.
    """
    S = _selection_matrix(n, strat_idx)
    X = cp.Variable((strat_idx.shape[0], 4))
    t = cp.Variable()
    eq = S @ X == targets
    prob = cp.Problem(cp.Maximize(t), [eq, _psd_soc(X, shift=t)])
    _run(prob, tol, "lhs membership", reduced_accuracy_ok=True)
    Y = np.asarray(eq.dual_value, dtype=float)
    dual_obj = float((Y * targets).sum())
    gap = abs(float(t.value) - dual_obj)
    return float(t.value), np.asarray(X.value), Y, gap


def _solve_max_scalar_restricted(n, strat_idx, base, slope, tol, what):
    """max v <= 1  s.t.  sum_lambda D sigma = base + v * slope,  sigma >= 0.

    Shared engine for critical p (v = entangled fraction at fixed epsilon)
    and critical epsilon (v = efficiency at fixed p).  Dual identity:
    v* = <Y, base> + mu with mu >= 0 the multiplier of v <= 1; when the cap
    is inactive <Y, slope> = -1, so the raw duals are already normalized to
    unit violation slope.
    """
    S = _selection_matrix(n, strat_idx)
    X = cp.Variable((strat_idx.shape[0], 4))
    v = cp.Variable()
    eq = S @ X == base + v * slope
    cap = v <= 1
    prob = cp.Problem(cp.Maximize(v), [eq, cap, _psd_soc(X)])
    _run(prob, tol, what)
    Y = np.asarray(eq.dual_value, dtype=float)
    mu = float(cap.dual_value)
    dual_obj = float((Y * base).sum()) + mu
    gap = abs(float(v.value) - dual_obj)
    return float(v.value), np.asarray(X.value), Y, mu, gap


def _row_generate(n, solve_fn, tol, early_stop=None, max_rounds=60,
                  max_add=400):
    """Grow a restricted strategy set until the dual covers all 3^n blocks.

    solve_fn(strat_idx) must return (payload, Y); convergence means
    lambda_min(sum_k F) >= -tol for every full strategy, which is exactly
    dual feasibility of the full program, so the restricted optimum is the
    global one.  early_stop(payload) may end the loop sooner when the
    restricted answer already settles the question (a restricted LHS model
    is a full one padded with zeros).
    """
    all_idx = _strategy_indices(n)
    current = _seed_strategies(n)
    for _ in range(max_rounds):
        payload, Y = solve_fn(current)
        if early_stop is not None and early_stop(payload):
            return payload, Y, current
        mins = _strategy_block_mins(_dual_operators(n, Y), all_idx)
        violated = np.where(mins < -tol)[0]
        if violated.size == 0:
            return payload, Y, current
        worst = violated[np.argsort(mins[violated])][:max_add]
        current = np.unique(np.concatenate([current, all_idx[worst]]), axis=0)
    raise SolverFailure(
        f"row generation did not converge in {max_rounds} rounds (n={n})",
        diagnostics={"restricted_size": int(current.shape[0])})


def _choose_indices(n, method):
    if method == "full":
        return _strategy_indices(n), False
    if method == "rowgen":
        return None, True
    if method == "auto":
        if n <= FULL_SOLVE_MAX_N:
            return _strategy_indices(n), False
        return None, True
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# decisions and bounds

@dataclass(frozen=True)
class LhsDecision:
    """Outcome of the membership test: a model or a verified certificate."""

    feasible: bool
    gap: float
    optimum: float
    model: dict | None = None
    certificate: Certificate | None = None


@dataclass(frozen=True)
class BoundPoint:
    """One point of a critical-parameter curve."""

    n: int
    family: str
    epsilon: float
    p_star: float
    status: str               # optimal | boundary | trivial | failed
    gap: float
    certificate: Certificate | None = field(default=None, repr=False)
    error: str | None = None


def _model_from_solution(n, strat_idx, X, targets):
    model = {}
    for row, xv in zip(strat_idx, X):
        if xv[0] + xv[1] > 1e-12:  # drop numerically empty blocks
            lam = tuple(OUTCOMES[i] for i in row)
            model[lam] = _unvec4(xv)
    S = _selection_matrix(n, strat_idx)
    residual = np.abs(S @ X - targets).max()
    if residual > 1e-7:
        raise SolverFailure(
            f"LHS model reconstruction residual {residual:.2e} exceeds 1e-7")
    return model


def lhs_membership(assemblage, tol=DEFAULT_GAP_TOL, method="auto"):
    """Decide whether an assemblage admits a local-hidden-state model.

    Feasible: returns the reconstructing model (subnormalized block per
    contributing strategy).  Infeasible: returns a steering functional that
    passes the exhaustive verifier; its pairing with the assemblage is the
    (negative) violation.  Raises SolverFailure rather than guessing when
    the solver does not reach an optimal certificate.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = assemblage.n
    targets = assemblage.target_rows()
    if assemblage.epsilon <= 1e-12:
        # all-null assemblage: the single all-null strategy reproduces it
        lam = tuple([NULL] * n)
        return LhsDecision(feasible=True, gap=0.0, optimum=0.0,
                           model={lam: assemblage.reduced_state})

    idx, use_rowgen = _choose_indices(n, method)
    if use_rowgen:
        def solve_fn(strat_idx):
            t, X, Y, gap = _solve_membership_restricted(n, strat_idx, targets, tol)
            return (t, X, gap), Y
        (t_val, X, gap), Y, idx = _row_generate(
            n, solve_fn, tol, early_stop=lambda payload: payload[0] >= -tol)
    else:
        t_val, X, Y, gap = _solve_membership_restricted(n, idx, targets, tol)

    if t_val >= -tol:
        model = _model_from_solution(n, idx, X, targets)
        return LhsDecision(feasible=True, gap=gap, optimum=t_val, model=model)

    ops = _dual_operators(n, Y)
    scale = abs(float((Y * targets).sum()))
    if scale > 1e-300:
        ops = ops / scale  # normalize to unit violation
    ops, slack = _repair_operators(ops, _strategy_indices(n))
    cert = Certificate(n=n, operators=ops, violation=-1.0 + slack)
    if not verify_certificate(cert, assemblage, tol=CERT_TOL):
        raise SolverFailure(
            "infeasibility certificate failed exhaustive verification",
            diagnostics={"t": t_val, "gap": gap, "repair_slack": slack})
    return LhsDecision(feasible=False, gap=gap, optimum=t_val, certificate=cert)


def _resolve_settings(n, family_or_settings):
    if isinstance(family_or_settings, MeasurementSet):
        s = family_or_settings
        if s.n != n:
            raise ValueError(f"settings have {s.n} measurements, expected {n}")
        return s, s.family
    tag = str(family_or_settings)
    if tag in ("phase", "phase_encoding"):
        return phase_encoding_set(n), "phase_encoding"
    if tag == "platonic":
        return platonic_set(n), "platonic"
    raise ValueError(f"unknown measurement family {tag!r}")


def _verified_certificate(n, Y, settings, scalar, fixed, v_star):
    """Build the certificate from max-scalar duals and verify both conditions.

    The raw duals have unit violation slope when the v <= 1 cap is inactive,
    so pairing with the assemblage at parameter v gives v* - v; condition
    (ii) is checked on a concrete assemblage just above the critical value,
    condition (i) by the exhaustive 3^n strategy scan.
    """
    ops, slack = _repair_operators(_dual_operators(n, Y), _strategy_indices(n))
    probe = min(v_star + 1e-3, 1.0)
    cert = Certificate(n=n, operators=ops, violation=-(probe - v_star) + slack)
    if scalar == "p":
        asm = build_test_assemblage(IsotropicParams(p=probe), fixed, settings)
    else:
        asm = build_test_assemblage(IsotropicParams(p=fixed), probe, settings)
    if not verify_certificate(cert, asm, tol=CERT_TOL):
        raise SolverFailure(
            "dual functional failed exhaustive certificate verification",
            diagnostics={"v_star": v_star, "probe": probe, "repair_slack": slack})
    return cert


def critical_p(n, epsilon, settings, tol=DEFAULT_GAP_TOL, method="auto",
               null_constraint="per-setting"):
    """Largest entangled fraction still explainable by an LHS model.

    At detection efficiency epsilon, assemblages built from isotropic states
    with p above the returned p_star certify steering with the detection
    loophole closed.  epsilon = 0 is trivially unsteerable (p_star = 1); for
    epsilon below the 1/n faking threshold the program is degenerate at the
    p <= 1 cap and the point is reported with status "boundary".
    """
    settings, family = _resolve_settings(n, settings)
    if not (0.0 <= epsilon <= 1.0):
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    if epsilon == 0.0:
        return BoundPoint(n=n, family=family, epsilon=0.0, p_star=1.0,
                          status="trivial", gap=0.0)
    if null_constraint == "average":
        return _critical_p_average(n, epsilon, settings, family, tol)
    if null_constraint != "per-setting":
        raise ValueError(f"unknown null_constraint {null_constraint!r}")

    plus, minus = _conclusive_blocks(settings, 1.0)
    iso = np.tile(_vec4(ID2 / 4.0), (n, 1))
    base = np.zeros((2 * n + 1, 4))
    slope = np.zeros((2 * n + 1, 4))
    base[:n] = epsilon * iso
    base[n:2 * n] = epsilon * iso
    slope[:n] = epsilon * (plus - iso)
    slope[n:2 * n] = epsilon * (minus - iso)
    base[2 * n] = _vec4((1.0 - epsilon) * ID2 / 2.0)

    return _critical_scalar(n, family, settings, epsilon, base, slope, tol,
                            method, scalar="p")


def critical_epsilon(n, p, settings, tol=DEFAULT_GAP_TOL, method="auto",
                     null_constraint="per-setting"):
    """Largest detection efficiency still explainable by an LHS model.

    Efficiencies above the returned value certify steering for the isotropic
    state with entangled fraction p.  p = 0 never steers (epsilon_star = 1).
    The BoundPoint stores the critical efficiency in its epsilon field.
    """
    settings, family = _resolve_settings(n, settings)
    if p == 0.0:
        return BoundPoint(n=n, family=family, epsilon=1.0, p_star=0.0,
                          status="trivial", gap=0.0)
    if not (0.0 < p <= 1.0):
        raise ValueError(f"p must lie in (0, 1], got {p}")
    if null_constraint == "average":
        return _critical_eps_average(n, p, settings, family, tol)
    if null_constraint != "per-setting":
        raise ValueError(f"unknown null_constraint {null_constraint!r}")

    plus, minus = _conclusive_blocks(settings, p)
    base = np.zeros((2 * n + 1, 4))
    slope = np.zeros((2 * n + 1, 4))
    slope[:n] = plus
    slope[n:2 * n] = minus
    base[2 * n] = _vec4(ID2 / 2.0)
    slope[2 * n] = _vec4(-ID2 / 2.0)
    return _critical_scalar(n, family, settings, p, base, slope, tol, method,
                            scalar="epsilon")


def _critical_scalar(n, family, settings, fixed, base, slope, tol, method,
                     scalar):
    what = f"critical_{scalar} (n={n})"
    idx, use_rowgen = _choose_indices(n, method)
    if use_rowgen:
        def solve_fn(strat_idx):
            v, X, Y, mu, gap = _solve_max_scalar_restricted(
                n, strat_idx, base, slope, tol, what)
            return (v, X, mu, gap), Y
        (v_star, X, mu, gap), Y, idx = _row_generate(n, solve_fn, tol)
    else:
        v_star, X, Y, mu, gap = _solve_max_scalar_restricted(
            n, idx, base, slope, tol, what)

    if v_star >= 1.0 - 1e-6:
        # cap active: the honest value saturates the physical range
        if scalar == "p":
            return BoundPoint(n=n, family=family, epsilon=fixed, p_star=1.0,
                              status="boundary", gap=gap)
        return BoundPoint(n=n, family=family, epsilon=1.0, p_star=fixed,
                          status="boundary", gap=gap)

    if gap > tol:
        raise SolverFailure(
            f"{what}: duality gap {gap:.2e} exceeds tolerance {tol:.2e}")
    cert = _verified_certificate(n, Y, settings, scalar, fixed, v_star)
    if scalar == "p":
        eps_field, p_field = fixed, v_star
    else:
        eps_field, p_field = v_star, fixed
    return BoundPoint(n=n, family=family, epsilon=float(eps_field),
                      p_star=float(p_field), status="optimal", gap=gap,
                      certificate=cert)


def bound_curve(n, family, epsilons, tol=DEFAULT_GAP_TOL, method="auto",
                threads=1):
    """critical_p swept over an efficiency grid; one BoundPoint per value.

    Individual failures are recorded with status "failed" without aborting
    the sweep.  Successful points are checked to be non-increasing in
    epsilon, which the loss-counting construction guarantees.
    """
    epsilons = [float(e) for e in epsilons]
    if any(not (0.0 < e <= 1.0) for e in epsilons):
        raise ValueError("grid values must lie in (0, 1]")
    if epsilons != sorted(epsilons):
        raise ValueError("grid must be sorted ascending")

    def one(eps):
        try:
            return critical_p(n, eps, family, tol=tol, method=method)
        except SolverFailure as exc:
            _, fam = _resolve_settings(n, family)
            return BoundPoint(n=n, family=fam, epsilon=eps, p_star=float("nan"),
                              status="failed", gap=float("nan"), error=str(exc))

    if threads > 1 and len(epsilons) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            points = list(pool.map(one, epsilons))
    else:
        points = [one(e) for e in epsilons]

    ok = [pt for pt in points if pt.status != "failed"]
    for prev, cur in zip(ok, ok[1:]):
        if cur.p_star > prev.p_star + 1e-6:
            raise SolverFailure(
                f"bound curve not monotone: p*({cur.epsilon}) = {cur.p_star} "
                f"> p*({prev.epsilon}) = {prev.p_star}")
    return points


def lossless_lhs_bound(settings):
    """Deterministic maximum of S_n at unit efficiency, by 2^n enumeration.

    Equals max over sign vectors a of ||sum_k a_k u_k|| / n for the set's
    Bloch directions u_k; the maximizing pure states realize it, so it is
    the exact LHS limit of the steering parameter without losses.
    """
    dirs = settings.bloch_matrix()
    n = dirs.shape[0]
    if n > 20:
        raise ValueError(f"enumeration guard: n = {n} > 20")
    best = 0.0
    chunk = 1 << 16
    total = 1 << n
    for lo in range(0, total, chunk):
        ids = np.arange(lo, min(lo + chunk, total), dtype=np.uint32)
        bits = (ids[:, None] >> np.arange(n)[None, :]) & 1
        signs = 1.0 - 2.0 * bits
        norms = np.linalg.norm(signs @ dirs, axis=1)
        best = max(best, float(norms.max()))
    return best / n


# ---------------------------------------------------------------------------
# average-over-settings null constraint (exploratory alternative)

def _average_feasible(n, settings, p, epsilon, tol):
    """Membership with per-setting conclusive weights free, mean fixed.

    The conclusive members keep the honest correlations but their weights
    eps_k may vary per setting as long as they average to epsilon; nulls
    absorb (1 - eps_k) I/2 each.  Strictly weaker than the per-setting
    constraint, since the adversary may concentrate detections.
    """
    plus, minus = _conclusive_blocks(settings, p)
    idx = _strategy_indices(n)  # average mode is exploratory; always full
    S = _selection_matrix(n, idx)
    X = cp.Variable((idx.shape[0], 4))
    t = cp.Variable()
    eps_k = cp.Variable(n)
    half_id = _vec4(ID2 / 2.0)
    rows = []
    for k in range(n):
        rows.append(cp.multiply(eps_k[k], plus[k]))
    for k in range(n):
        rows.append(cp.multiply(eps_k[k], minus[k]))
    # null row k=0 pins the reduced state; others follow by no-signaling
    rows.append((1.0 - eps_k[0]) * half_id)
    target = cp.vstack(rows)
    cons = [S @ X == target, cp.sum(eps_k) == n * epsilon,
            eps_k >= 0, eps_k <= 1, _psd_soc(X, shift=t)]
    prob = cp.Problem(cp.Maximize(t), cons)
    _run(prob, tol, f"average-null membership (n={n})")
    return float(t.value) >= -tol


def _critical_eps_average(n, p, settings, family, tol):
    plus, minus = _conclusive_blocks(settings, p)
    idx = _strategy_indices(n)
    S = _selection_matrix(n, idx)
    X = cp.Variable((idx.shape[0], 4))
    eps_k = cp.Variable(n)
    e = cp.Variable()
    half_id = _vec4(ID2 / 2.0)
    rows = [cp.multiply(eps_k[k], plus[k]) for k in range(n)]
    rows += [cp.multiply(eps_k[k], minus[k]) for k in range(n)]
    rows.append((1.0 - eps_k[0]) * half_id)
    cons = [S @ X == cp.vstack(rows), cp.sum(eps_k) == n * e,
            eps_k >= 0, eps_k <= 1, e <= 1, _psd_soc(X)]
    prob = cp.Problem(cp.Maximize(e), cons)
    _run(prob, tol, f"critical_epsilon average (n={n})")
    v = float(e.value)
    status = "boundary" if v >= 1.0 - 1e-6 else "optimal"
    return BoundPoint(n=n, family=family, epsilon=min(v, 1.0), p_star=float(p),
                      status=status, gap=float("nan"))


def _critical_p_average(n, epsilon, settings, family, tol):
    # p multiplies eps_k bilinearly, so bisect over feasibility instead
    lo, hi = 0.0, 1.0
    if _average_feasible(n, settings, 1.0, epsilon, tol):
        return BoundPoint(n=n, family=family, epsilon=epsilon, p_star=1.0,
                          status="boundary", gap=0.0)
    while hi - lo > BISECT_WIDTH:
        mid = 0.5 * (lo + hi)
        if _average_feasible(n, settings, mid, epsilon, tol):
            lo = mid
        else:
            hi = mid
    return BoundPoint(n=n, family=family, epsilon=epsilon,
                      p_star=0.5 * (lo + hi), status="optimal",
                      gap=BISECT_WIDTH)


# ---------------------------------------------------------------------------
# serialization

CSV_HEADER = "n,family,epsilon,p_star,status,gap"


def bound_points_to_csv(points):
    lines = [CSV_HEADER]
    for pt in points:
        lines.append(f"{pt.n},{pt.family},{pt.epsilon:.10g},{pt.p_star:.10g},"
                     f"{pt.status},{pt.gap:.6g}")
    return "\n".join(lines) + "\n"


def bound_points_to_doc(points):
    doc = []
    for pt in points:
        entry = {
            "n": pt.n, "family": pt.family, "epsilon": pt.epsilon,
            "p_star": pt.p_star, "status": pt.status, "gap": pt.gap,
        }
        if pt.certificate is not None:
            entry["certificate"] = pt.certificate.to_doc()
        if pt.error is not None:
            entry["error"] = pt.error
        doc.append(entry)
    return doc


def bound_points_to_json(points):
    return json.dumps(bound_points_to_doc(points), indent=2, sort_keys=True)

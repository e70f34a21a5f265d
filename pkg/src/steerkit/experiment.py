"""Seeded Monte-Carlo model of the fiber-optic time-bin steering test.

The experiment it mirrors: a pulsed source emits photon pairs entangled
across adjacent time bins; Alice keeps one photon, Bob receives the other
through a phase modulator; each arm ends in a delay interferometer and two
detectors.  Coincidences sort into five tracked delay bins per setting:

* side bins (+-1): correlated time-basis events (|00> and |11>),
* adjacent bins (+-2): uncorrelated time-basis events (|01>, |10>) and the
  accidental background used to estimate it,
* center bin (0): phase-basis events, split over the four detector pairs by
  the interference law P(a, b) = (1 + a b V p cos Delta)/4.

Rather than propagating photons one by one, each pulse slot draws from the
exact joint outcome distribution of the isotropic-state model and the
per-setting totals are sampled as Poisson/multinomial aggregates, which is
exact at the observable level and fast at any acquisition length.  Basis
choice is passive: one fair coin per detected pair selects time or phase
statistics for that event, the aggregate realisation of the interferometers'
50/50 splitters that keeps coincidence bookkeeping, heralding efficiency
and both correlator estimators mutually consistent.

Identical (config, seed) pairs give bit-identical histograms; the random
stream is consumed in a fixed documented order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import CalibrationError, EstimateError, SolverFailure, VerdictUnavailable
from .lhs import critical_p
from .measurements import phase_encoding_set
from .quantum import SteeringEstimate

PAIR_LABELS = ("A+B+", "A+B-", "A-B+", "A-B-")
PAIR_SIGNS = ((1, 1), (1, -1), (-1, 1), (-1, -1))
BIN_OFFSETS = (-2, -1, 0, 1, 2)
DETECTORS = ("A+", "A-", "B+", "B-")

DEFAULT_ALICE_LOSS_DB = (
    ("on_chip", 2.0),
    ("chip_fiber_coupling", 1.5),
    ("dwdm", 1.0),
    ("transmission", 0.1),
    ("amzi", 1.0),
    ("filtering", 0.5),
    ("snspd", 0.5),
)
# Bob's ledger is not itemized in the source experiment; the symmetric
# default is a desk-scale stand-in and only affects statistics, not bounds.
DEFAULT_BOB_LOSS_DB = DEFAULT_ALICE_LOSS_DB

_DRIFT_CHUNKS = 64


def total_efficiency(ledger):
    """Linear transmission 10^(-sum(dB)/10) of a component loss ledger.

    Entries may be plain dB values or (name, dB) pairs; an empty ledger is
    lossless.
    """
    total_db = 0.0
    for entry in ledger:
        db = entry[1] if isinstance(entry, (tuple, list)) else entry
        db = float(db)
        if db < 0:
            raise ValueError(f"loss entries must be >= 0 dB, got {db}")
        total_db += db
    return float(10.0 ** (-total_db / 10.0))


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one simulated acquisition run.

    pair_prob and duration_s defaults are chosen for desk-scale statistics;
    the source experiment does not quote either.  phase_offset_rad and
    schedule_slip_slots model systematic misalignments that the calibration
    routine recovers; leave them at zero for a calibrated run.
    phase_drift_sigma is the std of the residual phase random walk per
    sqrt(second), default off.
    """

    n_settings: int
    rep_rate_hz: float = 2.5e9
    pair_prob: float = 2e-4
    p: float = 0.99
    alice_loss_db: tuple = DEFAULT_ALICE_LOSS_DB
    bob_loss_db: tuple = DEFAULT_BOB_LOSS_DB
    visibility: float = 0.985
    dark_rate_hz: float = 100.0
    bin_width_s: float = 400e-12
    delay_s: float = 400e-12
    duration_s: float = 10.0
    seed: int = 12345
    phase_drift_sigma: float = 0.0
    phase_offset_rad: float = 0.0
    schedule_slip_slots: int = 0

    def __post_init__(self):
        def bad(name, why):
            raise ValueError(f"config field '{name}': {why}")

        if not isinstance(self.n_settings, (int, np.integer)) or self.n_settings < 2:
            bad("n_settings", f"must be an integer >= 2, got {self.n_settings}")
        if self.rep_rate_hz <= 0:
            bad("rep_rate_hz", "must be positive")
        if not (0.0 <= self.pair_prob <= 0.1):
            bad("pair_prob", f"must lie in [0, 0.1], got {self.pair_prob}")
        if not (0.0 <= self.p <= 1.0):
            bad("p", f"must lie in [0, 1], got {self.p}")
        if not (0.0 <= self.visibility <= 1.0):
            bad("visibility", f"must lie in [0, 1], got {self.visibility}")
        if self.dark_rate_hz < 0:
            bad("dark_rate_hz", "must be >= 0")
        if self.duration_s <= 0:
            bad("duration_s", "must be positive")
        if self.bin_width_s <= 0 or self.delay_s <= 0:
            bad("bin_width_s/delay_s", "must be positive")
        if abs(self.delay_s * self.rep_rate_hz - 1.0) > 1e-6:
            bad("delay_s", "interferometer delay must equal one pulse period "
                f"(delay*rep_rate = {self.delay_s * self.rep_rate_hz:g})")
        if self.phase_drift_sigma < 0:
            bad("phase_drift_sigma", "must be >= 0")
        for fname in ("alice_loss_db", "bob_loss_db"):
            ledger = getattr(self, fname)
            try:
                total_efficiency(ledger)
            except (ValueError, TypeError, IndexError) as exc:
                bad(fname, str(exc))
            object.__setattr__(self, fname,
                               tuple((str(nm), float(db)) for nm, db in ledger))
        if not isinstance(self.seed, (int, np.integer)):
            bad("seed", "must be an integer")
        if not isinstance(self.schedule_slip_slots, (int, np.integer)):
            bad("schedule_slip_slots", "must be an integer")

    @property
    def alice_efficiency(self):
        return total_efficiency(self.alice_loss_db)

    @property
    def bob_efficiency(self):
        return total_efficiency(self.bob_loss_db)

    def to_doc(self):
        return {
            "n_settings": self.n_settings,
            "rep_rate_hz": self.rep_rate_hz,
            "pair_prob": self.pair_prob,
            "p": self.p,
            "alice_loss_db": [list(x) for x in self.alice_loss_db],
            "bob_loss_db": [list(x) for x in self.bob_loss_db],
            "visibility": self.visibility,
            "dark_rate_hz": self.dark_rate_hz,
            "bin_width_s": self.bin_width_s,
            "delay_s": self.delay_s,
            "duration_s": self.duration_s,
            "seed": int(self.seed),
            "phase_drift_sigma": self.phase_drift_sigma,
            "phase_offset_rad": self.phase_offset_rad,
            "schedule_slip_slots": int(self.schedule_slip_slots),
        }

    def to_json(self):
        return json.dumps(self.to_doc(), indent=2, sort_keys=True)

    @classmethod
    def from_doc(cls, doc):
        if "n_settings" not in doc:
            raise ValueError("config field 'n_settings': missing")
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"config field '{sorted(extra)[0]}': unknown field")
        kwargs = dict(doc)
        for fname in ("alice_loss_db", "bob_loss_db"):
            if fname in kwargs:
                kwargs[fname] = tuple(tuple(x) for x in kwargs[fname])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text):
        return cls.from_doc(json.loads(text))


@dataclass
class HistogramSet:
    """Coincidence counts per (detector pair, setting, delay bin) + singles.

    counts has shape (4, n, 5) indexed by PAIR_LABELS x setting x
    BIN_OFFSETS; singles maps each detector to its raw click total.
    """

    n: int
    counts: np.ndarray
    singles: dict
    total_slots: int
    duration_s: float
    seed: int

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (4, self.n, 5):
            raise ValueError(f"counts must have shape (4, {self.n}, 5)")
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")
        missing = [d for d in DETECTORS if d not in self.singles]
        if missing:
            raise ValueError(f"singles missing detectors {missing}")

    def total_coincidences(self):
        return int(self.counts.sum())

    def merge(self, other):
        if other.n != self.n:
            raise ValueError("cannot merge histograms with different n")
        singles = {d: self.singles[d] + other.singles[d] for d in DETECTORS}
        return HistogramSet(n=self.n, counts=self.counts + other.counts,
                            singles=singles,
                            total_slots=self.total_slots + other.total_slots,
                            duration_s=self.duration_s + other.duration_s,
                            seed=self.seed)

    def to_csv(self):
        lines = ["pair,setting,bin,count"]
        for pi, pair in enumerate(PAIR_LABELS):
            for k in range(self.n):
                for bi, off in enumerate(BIN_OFFSETS):
                    lines.append(f"{pair},{k},{off},{self.counts[pi, k, bi]}")
        return "\n".join(lines) + "\n"

    def to_doc(self):
        return {
            "n": self.n,
            "pair_labels": list(PAIR_LABELS),
            "bin_offsets": list(BIN_OFFSETS),
            "counts": self.counts.tolist(),
            "singles": {d: int(self.singles[d]) for d in DETECTORS},
            "total_slots": int(self.total_slots),
            "duration_s": self.duration_s,
            "seed": int(self.seed),
        }

    def to_json(self):
        return json.dumps(self.to_doc(), indent=2, sort_keys=True)

    @classmethod
    def from_doc(cls, doc):
        return cls(n=int(doc["n"]), counts=np.asarray(doc["counts"]),
                   singles=dict(doc["singles"]),
                   total_slots=int(doc["total_slots"]),
                   duration_s=float(doc["duration_s"]), seed=int(doc["seed"]))

    @classmethod
    def from_json(cls, text):
        return cls.from_doc(json.loads(text))


def _schedule_phases(n):
    """Bob's modulated phase per setting slot; slot 0 is the time basis."""
    thetas = np.zeros(n)
    for k, m in enumerate(phase_encoding_set(n).measurements):
        if m.theta is not None:
            thetas[k] = m.theta
    return thetas


def _net_phases(config):
    """Net interference phase Delta_k per recorded setting.

    Alice honestly applies the complementary phase of her scheduled slot;
    a schedule slip makes her slot lag Bob's, and any systematic offset
    adds directly.
    """
    n = config.n_settings
    thetas = _schedule_phases(n)
    slip = int(config.schedule_slip_slots) % n
    alice = np.array([-thetas[(k - slip) % n] for k in range(n)])
    return thetas + alice + config.phase_offset_rad


def _true_class_probs(p, visibility, delta):
    """Per-true-coincidence probabilities over the 20 (pair, bin) cells."""
    probs = np.zeros((4, 5))
    time_corr = (1.0 + p) / 32.0      # per pair, per side bin
    time_unc = (1.0 - p) / 32.0       # per pair, per adjacent bin
    for pi, (a, b) in enumerate(PAIR_SIGNS):
        probs[pi, 1] = time_corr      # |11|: late-late side peak
        probs[pi, 3] = time_corr      # |00|: early-early side peak
        probs[pi, 0] = time_unc
        probs[pi, 4] = time_unc
        probs[pi, 2] = (1.0 + a * b * visibility * p * np.cos(delta)) / 8.0
    return probs


def simulate_run(config):
    """Run one seeded acquisition and return its HistogramSet.

    Random stream order (fixed for reproducibility): drift walk if enabled,
    then per setting ascending and per drift chunk: true-coincidence total,
    its multinomial class split, the accidental Poisson field; finally the
    pair-side singles, their port splits, and the dark counts per detector.
    """
    n = config.n_settings
    rng = np.random.default_rng(int(config.seed))
    eta_a = config.alice_efficiency
    eta_b = config.bob_efficiency
    q = config.pair_prob
    total_slots = int(round(config.duration_s * config.rep_rate_hz))
    base, rem = divmod(total_slots, n)
    slots_k = np.full(n, base, dtype=np.int64)
    slots_k[:rem] += 1

    chunks = _DRIFT_CHUNKS if config.phase_drift_sigma > 0 else 1
    if chunks > 1:
        step = config.phase_drift_sigma * np.sqrt(config.duration_s / chunks)
        drift = np.cumsum(rng.normal(0.0, step, size=chunks))
    else:
        drift = np.zeros(1)

    deltas = _net_phases(config)
    dark_per_slot_side = 2.0 * config.dark_rate_hz / config.rep_rate_hz
    lam_a = q * eta_a + dark_per_slot_side
    lam_b = q * eta_b + dark_per_slot_side
    acc_cell_rate = (lam_a / 2.0) * (lam_b / 2.0)

    counts = np.zeros((4, n, 5), dtype=np.int64)
    true_total = 0
    for k in range(n):
        chunk_slots = np.full(chunks, slots_k[k] // chunks, dtype=np.int64)
        chunk_slots[:slots_k[k] % chunks] += 1
        for c in range(chunks):
            n_slots = int(chunk_slots[c])
            if n_slots == 0:
                continue
            t_count = rng.poisson(n_slots * q * eta_a * eta_b)
            true_total += int(t_count)
            probs = _true_class_probs(config.p, config.visibility,
                                      deltas[k] + drift[c])
            if t_count > 0:
                cells = rng.multinomial(t_count, probs.ravel()).reshape(4, 5)
                counts[:, k, :] += cells
            acc = rng.poisson(n_slots * acc_cell_rate, size=(4, 5))
            counts[:, k, :] += acc

    a_only = int(rng.poisson(total_slots * q * eta_a * (1.0 - eta_b)))
    b_only = int(rng.poisson(total_slots * q * eta_b * (1.0 - eta_a)))
    a_photons = true_total + a_only
    b_photons = true_total + b_only
    a_plus = int(rng.binomial(a_photons, 0.5)) if a_photons else 0
    b_plus = int(rng.binomial(b_photons, 0.5)) if b_photons else 0
    dark = rng.poisson(config.dark_rate_hz * config.duration_s, size=4)
    singles = {
        "A+": a_plus + int(dark[0]),
        "A-": (a_photons - a_plus) + int(dark[1]),
        "B+": b_plus + int(dark[2]),
        "B-": (b_photons - b_plus) + int(dark[3]),
    }
    return HistogramSet(n=n, counts=counts, singles=singles,
                        total_slots=total_slots, duration_s=config.duration_s,
                        seed=int(config.seed))


@dataclass(frozen=True)
class KlyshkoEstimate:
    """Heralding-efficiency estimates for both arms.

    alice = accidental-corrected coincidences / Bob-side singles, and
    symmetrically; coincidences is the corrected total, raw the tracked one.
    """

    alice: float
    alice_err: float
    bob: float
    bob_err: float
    coincidences: float
    raw_coincidences: int
    accidental_estimate: float


def estimate_klyshko(hist):
    """Klyshko efficiency: corrected coincidences over opposite-arm singles.

    The accidental rate per histogram cell is estimated from the two
    adjacent bins and subtracted from the tracked total before dividing.
    """
    if hist.total_coincidences() == 0 and all(v == 0 for v in hist.singles.values()):
        raise EstimateError("histograms are empty")
    n = hist.n
    raw = int(hist.counts.sum())
    adj = int(hist.counts[:, :, [0, 4]].sum())
    acc_per_cell = adj / (8.0 * n)
    corrected = max(raw - acc_per_cell * 20.0 * n, 0.0)
    singles_a = hist.singles["A+"] + hist.singles["A-"]
    singles_b = hist.singles["B+"] + hist.singles["B-"]
    if singles_a == 0 or singles_b == 0:
        raise EstimateError("opposite-arm singles are zero")
    # corrected = (raw - adj) - 1.5 * adj in variance terms
    var = max((raw - adj) + 2.25 * adj, 1.0)
    return KlyshkoEstimate(
        alice=corrected / singles_b,
        alice_err=float(np.sqrt(var)) / singles_b,
        bob=corrected / singles_a,
        bob_err=float(np.sqrt(var)) / singles_a,
        coincidences=corrected,
        raw_coincidences=raw,
        accidental_estimate=acc_per_cell * 20.0 * n,
    )


def estimate_steering(hist, n):
    """Steering parameter from the histograms, with binomial standard errors.

    The k=0 (time-basis) correlator pools side-peak counts from every
    setting against the adjacent-bin accidental estimate; each k >= 1 phase
    correlator reads the central-bin counts of its own setting.  Central
    counts recorded while the time-basis slot was scheduled are left unused.
    """
    if n != hist.n:
        raise ValueError(f"histogram holds {hist.n} settings, expected {n}")
    side = int(hist.counts[:, :, [1, 3]].sum())
    adj = int(hist.counts[:, :, [0, 4]].sum())
    tot0 = side + adj
    if tot0 == 0:
        raise EstimateError("time-basis buckets (side and adjacent bins) are empty")
    e0 = (side - adj) / tot0
    se0 = max(2.0 * np.sqrt(side * adj / tot0) / tot0, 1.0 / tot0)

    per = [e0]
    errs = [se0]
    for k in range(1, n):
        c = hist.counts[:, k, 2].astype(float)
        tot = c.sum()
        if tot == 0:
            raise EstimateError(f"central-peak bucket for setting {k} is empty")
        ek = (c[0] + c[3] - c[1] - c[2]) / tot
        per.append(ek)
        errs.append(max(np.sqrt(max(1.0 - ek * ek, 0.0) / tot), 1.0 / tot))

    value = float(np.mean(per))
    std_err = float(np.sqrt(np.sum(np.square(errs))) / n)
    return SteeringEstimate(value=value, per_setting=tuple(per), n=n,
                            std_err=std_err, per_setting_err=tuple(errs))


# ---------------------------------------------------------------------------
# calibration

@dataclass(frozen=True)
class CalibrationResult:
    phase_offset_rad: float
    schedule_slip_slots: int
    s_at_optimum: float


def _wrap_angle(x):
    return float(np.arctan2(np.sin(x), np.cos(x)))


def _probe_s(config, phase_comp, slip_comp, n_probe, duration, seed_salt):
    cfg = replace(
        config,
        n_settings=n_probe,
        duration_s=duration,
        phase_offset_rad=config.phase_offset_rad - phase_comp,
        schedule_slip_slots=(config.schedule_slip_slots - slip_comp) % n_probe
        if n_probe > 1 else 0,
        seed=(int(config.seed) * 1_000_003 + seed_salt) % (2 ** 63),
    )
    hist = simulate_run(cfg)
    return estimate_steering(hist, n_probe).value


def calibrate_phase(config, probe_duration=0.5, target=0.5, tol=0.02):
    """Recover the systematic phase offset and schedule slip of a config.

    Stage one mirrors the voltage calibration: a complementary two-setting
    run whose steering parameter traces S(phi) = (p + V p cos(phi0-phi))/2;
    the two S = 0.5 crossings are bisected and their midpoint fixes the
    modulation phase.  Stage two scans all relative schedule delays with the
    recovered phase compensated and keeps the S_n-maximizing slip.
    """
    coarse = 24
    grid = np.linspace(-np.pi, np.pi, coarse, endpoint=False)
    s_vals = [ _probe_s(config, phi, 0, 2, probe_duration, 10_000 + i)
               for i, phi in enumerate(grid) ]
    i_best = int(np.argmax(s_vals))
    phi_best = grid[i_best]
    s_best = s_vals[i_best]
    s_worst = min(s_vals)
    if s_best <= target or s_worst >= target:
        raise CalibrationError(
            f"cannot bracket S = {target}: probe range [{s_worst:.3f}, {s_best:.3f}]")

    def bisect(lo, hi, salt):
        # S(lo) > target > S(hi); works for either interval orientation
        for i in range(24):
            if abs(hi - lo) < 1e-3:
                break
            mid = 0.5 * (lo + hi)
            if _probe_s(config, mid, 0, 2, probe_duration, salt + i) > target:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    up = bisect(phi_best, phi_best + np.pi, 20_000)
    down = bisect(phi_best, phi_best - np.pi, 30_000)
    phase_hat = _wrap_angle(0.5 * (up + down))

    n = config.n_settings
    s_by_slip = [ _probe_s(config, phase_hat, d, n, probe_duration, 40_000 + d)
                  for d in range(n) ]
    slip_hat = int(np.argmax(s_by_slip))
    return CalibrationResult(phase_offset_rad=phase_hat,
                             schedule_slip_slots=slip_hat,
                             s_at_optimum=float(max(s_by_slip)))


# ---------------------------------------------------------------------------
# verdict

@dataclass(frozen=True)
class TestVerdict:
    """Final record: measured S_n and efficiency against the critical bound."""

    s_n: SteeringEstimate
    epsilon_hat: float
    epsilon_err: float
    p_star_at_epsilon: float
    passed: bool
    margin: float
    n: int
    family: str
    bound_status: str

    def to_doc(self):
        return {
            "n": self.n,
            "family": self.family,
            "s_n": {
                "value": self.s_n.value,
                "std_err": self.s_n.std_err,
                "per_setting": list(self.s_n.per_setting),
                "per_setting_err": list(self.s_n.per_setting_err)
                if self.s_n.per_setting_err else None,
            },
            "epsilon_hat": self.epsilon_hat,
            "epsilon_err": self.epsilon_err,
            "p_star_at_epsilon": self.p_star_at_epsilon,
            "bound_status": self.bound_status,
            "passed": self.passed,
            "margin": self.margin,
        }

    def to_json(self):
        return json.dumps(self.to_doc(), indent=2, sort_keys=True)


def verdict(s_n, epsilon_hat, n, settings, epsilon_err=0.0, conservative=False,
            tol=1e-7):
    """Compare a measured steering parameter against the critical bound.

    The bound p* is evaluated at the measured efficiency (optionally at its
    lower uncertainty edge); the test passes when S_n exceeds p*.  The margin
    is (S_n - p*) in units of the combined standard error: the S_n error and
    the efficiency error propagated through the bound's local slope, the
    latter estimated with one extra bound solve when epsilon_err is given.
    """
    if not (0.0 < epsilon_hat <= 1.0):
        raise ValueError(f"epsilon_hat must lie in (0, 1], got {epsilon_hat}")
    eps_eval = epsilon_hat - epsilon_err if conservative else epsilon_hat
    eps_eval = float(np.clip(eps_eval, 1e-9, 1.0))
    try:
        point = critical_p(n, eps_eval, settings, tol=tol)
        bound_err = 0.0
        if epsilon_err > 0 and point.status == "optimal":
            delta = max(epsilon_err, 1e-4)
            nearby = critical_p(n, min(eps_eval + delta, 1.0), settings, tol=tol)
            slope = (nearby.p_star - point.p_star) / delta
            bound_err = abs(slope) * epsilon_err
    except SolverFailure as exc:
        raise VerdictUnavailable(f"critical bound unavailable: {exc}") from exc
    passed = bool(s_n.value > point.p_star)
    combined = float(np.hypot(s_n.std_err or 0.0, bound_err))
    if combined > 0:
        margin = (s_n.value - point.p_star) / combined
    else:
        margin = float("inf") if s_n.value != point.p_star else 0.0
        margin = margin if s_n.value > point.p_star else -abs(margin)
    return TestVerdict(s_n=s_n, epsilon_hat=float(epsilon_hat),
                       epsilon_err=float(epsilon_err),
                       p_star_at_epsilon=float(point.p_star), passed=passed,
                       margin=float(margin), n=n, family=point.family,
                       bound_status=point.status)


@dataclass(frozen=True)
class ExperimentResult:
    config: ExperimentConfig
    histograms: HistogramSet
    klyshko: KlyshkoEstimate
    steering: SteeringEstimate
    verdict: TestVerdict


def run_experiment(config, conservative=False, tol=1e-7):
    """simulate -> estimate efficiency and S_n -> verdict, in one call."""
    hist = simulate_run(config)
    kly = estimate_klyshko(hist)
    s_n = estimate_steering(hist, config.n_settings)
    v = verdict(s_n, kly.alice, config.n_settings,
                phase_encoding_set(config.n_settings),
                epsilon_err=kly.alice_err, conservative=conservative, tol=tol)
    return ExperimentResult(config=config, histograms=hist, klyshko=kly,
                            steering=s_n, verdict=v)

import numpy as np
import pytest

from steerkit.errors import CalibrationError, EstimateError
from steerkit.experiment import (BIN_OFFSETS, DEFAULT_ALICE_LOSS_DB,
                                 ExperimentConfig, HistogramSet,
                                 calibrate_phase, estimate_klyshko,
                                 estimate_steering, run_experiment,
                                 simulate_run, total_efficiency, verdict)
from steerkit.measurements import complementary_settings, phase_encoding_set
from steerkit.quantum import IsotropicParams, SteeringEstimate, \
    expected_steering_parameter


def _blank_hist(n, singles=None):
    return HistogramSet(
        n=n, counts=np.zeros((4, n, 5), dtype=np.int64),
        singles=singles or {"A+": 0, "A-": 0, "B+": 0, "B-": 0},
        total_slots=10_000, duration_s=1.0, seed=0)


class TestTotalEfficiency:
    def test_paper_alice_ledger(self):
        assert abs(total_efficiency(DEFAULT_ALICE_LOSS_DB) - 0.2188) < 1e-4

    def test_empty_ledger(self):
        assert total_efficiency([]) == 1.0

    def test_single_3db(self):
        assert abs(total_efficiency([3.0]) - 0.5012) < 1e-4

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            total_efficiency([("bad", -0.5)])


class TestConfig:
    def test_defaults_consistent(self):
        cfg = ExperimentConfig(n_settings=9)
        assert abs(cfg.alice_efficiency - 0.2188) < 1e-4
        assert abs(cfg.delay_s * cfg.rep_rate_hz - 1.0) < 1e-9

    def test_json_round_trip(self):
        cfg = ExperimentConfig(n_settings=6, seed=7, pair_prob=1e-4)
        back = ExperimentConfig.from_json(cfg.to_json())
        assert back == cfg

    @pytest.mark.parametrize("field,value,fragment", [
        ("pair_prob", 0.5, "pair_prob"),
        ("visibility", 1.5, "visibility"),
        ("n_settings", 1, "n_settings"),
        ("duration_s", 0.0, "duration_s"),
        ("dark_rate_hz", -1.0, "dark_rate_hz"),
    ])
    def test_validation_names_field(self, field, value, fragment):
        with pytest.raises(ValueError, match=fragment):
            ExperimentConfig(**{"n_settings": 9, field: value})

    def test_delay_rep_rate_consistency(self):
        with pytest.raises(ValueError, match="delay"):
            ExperimentConfig(n_settings=9, delay_s=500e-12)

    def test_unknown_json_field_named(self):
        with pytest.raises(ValueError, match="visibilty"):
            ExperimentConfig.from_doc({"n_settings": 9, "visibilty": 0.9})


class TestSimulateRun:
    def test_deterministic_given_seed(self):
        cfg = ExperimentConfig(n_settings=5, seed=77, duration_s=0.2)
        h1 = simulate_run(cfg)
        h2 = simulate_run(cfg)
        assert np.array_equal(h1.counts, h2.counts)
        assert h1.singles == h2.singles

    def test_seed_changes_output(self):
        cfg = ExperimentConfig(n_settings=5, seed=77, duration_s=0.2)
        h2 = simulate_run(ExperimentConfig(n_settings=5, seed=78, duration_s=0.2))
        assert not np.array_equal(simulate_run(cfg).counts, h2.counts)

    def test_pure_dark_counts(self):
        cfg = ExperimentConfig(n_settings=4, seed=5, pair_prob=0.0,
                               dark_rate_hz=100.0, duration_s=10.0)
        hist = simulate_run(cfg)
        mean = 100.0 * 10.0
        bound = 5 * np.sqrt(mean)
        for det in ("A+", "A-", "B+", "B-"):
            assert abs(hist.singles[det] - mean) < bound
        assert hist.counts.sum() <= 5  # essentially no coincidence structure

    def test_ideal_central_peak_anticorrelated_empty(self):
        # true pairs hit A+B-/A-B+ with probability (1 - V p)/8 = 0 at
        # Delta = 0; only the (tiny) multi-pair accidental floor remains
        cfg = ExperimentConfig(n_settings=4, seed=9, p=1.0, visibility=1.0,
                               pair_prob=3e-5, dark_rate_hz=0.0, duration_s=0.5)
        hist = simulate_run(cfg)
        center = BIN_OFFSETS.index(0)
        for k in range(1, 4):
            assert hist.counts[1, k, center] <= 1
            assert hist.counts[2, k, center] <= 1
            assert hist.counts[0, k, center] > 50
            assert hist.counts[3, k, center] > 50

    def test_count_conservation(self):
        cfg = ExperimentConfig(n_settings=5, seed=21, duration_s=0.2)
        hist = simulate_run(cfg)
        singles_a = hist.singles["A+"] + hist.singles["A-"]
        singles_b = hist.singles["B+"] + hist.singles["B-"]
        assert hist.counts.sum() <= min(singles_a, singles_b)
        for pi in range(4):
            assert hist.counts[pi].sum() <= hist.total_slots

    def test_merge_is_additive(self):
        cfg = ExperimentConfig(n_settings=3, seed=1, duration_s=0.1)
        h1 = simulate_run(cfg)
        h2 = simulate_run(ExperimentConfig(n_settings=3, seed=2, duration_s=0.1))
        merged = h1.merge(h2)
        assert np.array_equal(merged.counts, h1.counts + h2.counts)
        assert merged.singles["B+"] == h1.singles["B+"] + h2.singles["B+"]

    def test_csv_format(self):
        cfg = ExperimentConfig(n_settings=3, seed=1, duration_s=0.05)
        text = simulate_run(cfg).to_csv()
        lines = text.strip().split("\n")
        assert lines[0] == "pair,setting,bin,count"
        assert len(lines) == 1 + 4 * 3 * 5
        assert lines[1].startswith("A+B+,0,-2,")


class TestEstimators:
    def test_klyshko_definitional(self):
        hist = _blank_hist(2, singles={"A+": 600, "A-": 400,
                                       "B+": 5000, "B-": 5000})
        hist.counts[0, 0, 2] = 1000  # 1000 coincidences, no accidentals
        est = estimate_klyshko(hist)
        assert abs(est.alice - 0.100) < 1e-12
        assert abs(est.bob - 1.0) < 1e-12

    def test_klyshko_full_simulation(self):
        cfg = ExperimentConfig(n_settings=9, seed=33, p=1.0, duration_s=2.0)
        est = estimate_klyshko(simulate_run(cfg))
        assert est.raw_coincidences >= 10_000
        assert abs(est.alice - 0.219) < 0.01

    def test_klyshko_zero_coincidences(self):
        hist = _blank_hist(2, singles={"A+": 100, "A-": 100,
                                       "B+": 100, "B-": 100})
        est = estimate_klyshko(hist)
        assert est.alice == 0.0
        assert np.isfinite(est.alice_err) and est.alice_err > 0

    def test_klyshko_zero_singles_rejected(self):
        hist = _blank_hist(2)
        hist.counts[0, 0, 2] = 5
        with pytest.raises(EstimateError):
            estimate_klyshko(hist)

    def test_steering_consistency_with_ideal(self):
        # negligible accidentals: estimator converges on the exact value
        cfg = ExperimentConfig(n_settings=9, seed=3, p=0.95, visibility=1.0,
                               pair_prob=3e-5, dark_rate_hz=0.0,
                               duration_s=50.0)
        est = estimate_steering(simulate_run(cfg), 9)
        assert abs(est.value - 0.95) < 3 * est.std_err

    def test_steering_visibility_closed_form(self):
        cfg = ExperimentConfig(n_settings=9, seed=4, p=1.0, visibility=0.985,
                               pair_prob=3e-5, dark_rate_hz=0.0,
                               duration_s=100.0)
        est = estimate_steering(simulate_run(cfg), 9)
        expected = (1 + 8 * 0.985) / 9
        assert abs(est.value - expected) < 3 * est.std_err
        for ek in est.per_setting[1:]:
            assert abs(ek - 0.985) < 0.01

    def test_steering_matches_quantum_core_prediction(self):
        cfg = ExperimentConfig(n_settings=5, seed=12, p=0.9, visibility=0.97,
                               pair_prob=3e-5, dark_rate_hz=0.0, duration_s=50.0)
        est = estimate_steering(simulate_run(cfg), 5)
        settings = phase_encoding_set(5)
        ideal = expected_steering_parameter(IsotropicParams(p=0.9), settings,
                                            complementary_settings(settings),
                                            visibility=0.97)
        assert abs(est.value - ideal.value) < 3 * est.std_err

    def test_klyshko_converges_with_duration(self):
        # estimate approaches the ledger truth with shrinking error bars
        truth = ExperimentConfig(n_settings=5).alice_efficiency
        errs = []
        for i, duration in enumerate((0.2, 1.0, 5.0)):
            cfg = ExperimentConfig(n_settings=5, seed=50 + i, p=1.0,
                                   duration_s=duration)
            est = estimate_klyshko(simulate_run(cfg))
            assert abs(est.alice - truth) < 5 * est.alice_err + 2e-3
            errs.append(est.alice_err)
        assert errs[0] > errs[1] > errs[2]

    def test_phase_drift_degrades_phase_correlators(self):
        base = ExperimentConfig(n_settings=5, seed=60, p=1.0, visibility=1.0,
                                dark_rate_hz=0.0, duration_s=5.0)
        drift = ExperimentConfig(n_settings=5, seed=60, p=1.0, visibility=1.0,
                                 dark_rate_hz=0.0, duration_s=5.0,
                                 phase_drift_sigma=0.5)
        s_base = estimate_steering(simulate_run(base), 5)
        s_drift = estimate_steering(simulate_run(drift), 5)
        assert s_drift.value < s_base.value - 0.005
        # drift path stays deterministic
        again = estimate_steering(simulate_run(drift), 5)
        assert again.value == s_drift.value

    def test_dark_only_steering_consistent_with_zero(self):
        cfg = ExperimentConfig(n_settings=9, seed=6, pair_prob=0.0,
                               dark_rate_hz=2e5, duration_s=2.0)
        est = estimate_steering(simulate_run(cfg), 9)
        assert abs(est.value) < 3 * est.std_err

    def test_empty_setting_bucket_named(self):
        hist = _blank_hist(4, singles={"A+": 10, "A-": 10, "B+": 10, "B-": 10})
        hist.counts[:, :, [1, 3]] = 50     # time-basis data present
        hist.counts[:, 1, 2] = 40          # only setting 1 has phase data
        with pytest.raises(EstimateError, match="setting 2"):
            estimate_steering(hist, 4)

    def test_wrong_n_rejected(self):
        with pytest.raises(ValueError):
            estimate_steering(_blank_hist(4), 5)


class TestCalibration:
    def test_zero_offset_recovered(self):
        cfg = ExperimentConfig(n_settings=4, seed=15, duration_s=1.0)
        cal = calibrate_phase(cfg)
        assert abs(cal.phase_offset_rad) < 0.02
        assert cal.schedule_slip_slots == 0

    def test_injected_offset_recovered(self):
        cfg = ExperimentConfig(n_settings=4, seed=16, duration_s=1.0,
                               phase_offset_rad=0.3)
        cal = calibrate_phase(cfg)
        assert abs(cal.phase_offset_rad - 0.3) < 0.02

    def test_injected_slip_recovered(self):
        cfg = ExperimentConfig(n_settings=5, seed=17, duration_s=1.0,
                               phase_offset_rad=-0.7, schedule_slip_slots=1)
        cal = calibrate_phase(cfg)
        assert cal.schedule_slip_slots == 1
        assert abs(cal.phase_offset_rad + 0.7) < 0.02

    def test_unbracketable_target_raises(self):
        # V = 0 and p = 0.5 pin S at 0.25, far below the 0.5 target
        cfg = ExperimentConfig(n_settings=4, seed=18, visibility=0.0, p=0.5)
        with pytest.raises(CalibrationError):
            calibrate_phase(cfg)


class TestVerdict:
    def test_low_efficiency_always_fails(self):
        s = SteeringEstimate(value=0.99, per_setting=(0.99,) * 9, n=9,
                             std_err=1e-3)
        v = verdict(s, 0.10, 9, phase_encoding_set(9))
        assert v.p_star_at_epsilon == 1.0
        assert not v.passed

    def test_weak_correlation_fails(self):
        s = SteeringEstimate(value=0.3, per_setting=(0.3,) * 9, n=9,
                             std_err=1e-3)
        v = verdict(s, 0.8, 9, phase_encoding_set(9))
        assert not v.passed
        assert v.margin < 0

    def test_strong_correlation_passes_n3(self):
        s = SteeringEstimate(value=0.95, per_setting=(0.95,) * 3, n=3,
                             std_err=1e-3)
        v = verdict(s, 1.0, 3, phase_encoding_set(3))
        assert v.passed
        assert v.margin > 3

    def test_conservative_uses_lower_edge(self):
        s = SteeringEstimate(value=0.95, per_setting=(0.95,) * 3, n=3,
                             std_err=1e-3)
        plain = verdict(s, 0.8, 3, phase_encoding_set(3), epsilon_err=0.05)
        conservative = verdict(s, 0.8, 3, phase_encoding_set(3),
                               epsilon_err=0.05, conservative=True)
        assert conservative.p_star_at_epsilon >= plain.p_star_at_epsilon

    def test_epsilon_out_of_range(self):
        s = SteeringEstimate(value=0.9, per_setting=(0.9,), n=1, std_err=1e-3)
        with pytest.raises(ValueError):
            verdict(s, 0.0, 3, phase_encoding_set(3))


class TestEndToEnd:
    def test_default_run_passes(self):
        res = run_experiment(ExperimentConfig(n_settings=9, seed=101))
        assert res.verdict.passed
        assert res.verdict.margin > 3

    def test_forced_low_efficiency_fails(self):
        cfg = ExperimentConfig(n_settings=9, seed=101,
                               alice_loss_db=(("total", 10.2),))
        res = run_experiment(cfg)
        assert res.klyshko.alice < 1 / 9
        assert not res.verdict.passed

import json
import subprocess
import sys

from steerkit.experiment import ExperimentConfig


def run_cli(args, cwd):
    """Invoke the CLI through its real entry point (exit-code contract)."""
    return subprocess.run(
        [sys.executable, "-c", "from steerkit.cli import main; main()"] + args,
        capture_output=True, text=True, cwd=cwd)


class TestBounds:
    def test_small_curve(self, tmp_path):
        r = run_cli(["bounds", "--n", "3", "--family", "phase",
                     "--eps", "0.5:1.0:0.25", "--out", "curve.csv"], tmp_path)
        assert r.returncode == 0, r.stderr
        lines = (tmp_path / "curve.csv").read_text().strip().split("\n")
        assert lines[0] == "n,family,epsilon,p_star,status,gap"
        assert len(lines) == 4  # eps 0.5, 0.75, 1.0
        stars = [float(l.split(",")[3]) for l in lines[1:]]
        assert stars == sorted(stars, reverse=True)

        sidecar = json.loads((tmp_path / "curve.json").read_text())
        assert sidecar["manifest"] == "curve.manifest.json"
        assert any("certificate" in pt for pt in sidecar["points"])

        manifest = json.loads((tmp_path / "curve.manifest.json").read_text())
        assert manifest["command"] == "bounds"
        assert "curve.csv" in manifest["outputs"]
        assert manifest["tool_version"]

    def test_n_range_and_single_point(self, tmp_path):
        r = run_cli(["bounds", "--n", "2-3", "--eps", "1.0:1.0:1",
                     "--out", "two.csv"], tmp_path)
        assert r.returncode == 0, r.stderr
        lines = (tmp_path / "two.csv").read_text().strip().split("\n")
        assert len(lines) == 3
        assert lines[1].split(",")[0] == "2"
        assert lines[2].split(",")[0] == "3"

    def test_below_threshold_single_row(self, tmp_path):
        r = run_cli(["bounds", "--n", "9", "--eps", "0.10:0.10:1",
                     "--out", "th.csv"], tmp_path)
        assert r.returncode == 0, r.stderr
        row = (tmp_path / "th.csv").read_text().strip().split("\n")[1]
        fields = row.split(",")
        assert float(fields[3]) == 1.0
        assert fields[4] == "boundary"

    def test_unsupported_platonic_exits_1(self, tmp_path):
        r = run_cli(["bounds", "--n", "5", "--family", "platonic",
                     "--eps", "0.5:1.0:0.5", "--out", "x.csv"], tmp_path)
        assert r.returncode == 1

    def test_invalid_grid_exits_1(self, tmp_path):
        r = run_cli(["bounds", "--n", "3", "--eps", "0:1:0.5",
                     "--out", "x.csv"], tmp_path)
        assert r.returncode == 1

    def test_csv_byte_stable(self, tmp_path):
        for sub in ("a", "b"):
            (tmp_path / sub).mkdir()
            r = run_cli(["bounds", "--n", "3", "--eps", "0.6:1.0:0.2",
                         "--out", "c.csv"], tmp_path / sub)
            assert r.returncode == 0, r.stderr
        assert (tmp_path / "a" / "c.csv").read_bytes() == \
               (tmp_path / "b" / "c.csv").read_bytes()

    def test_thread_env_var_keeps_output_stable(self, tmp_path):
        import os
        for sub, threads in (("one", "1"), ("two", "3")):
            (tmp_path / sub).mkdir()
            env = dict(os.environ, STEERKIT_THREADS=threads)
            r = subprocess.run(
                [sys.executable, "-c",
                 "from steerkit.cli import main; main()",
                 "bounds", "--n", "4", "--eps", "0.4:1.0:0.2",
                 "--out", "c.csv"],
                capture_output=True, text=True, cwd=tmp_path / sub, env=env)
            assert r.returncode == 0, r.stderr
        assert (tmp_path / "one" / "c.csv").read_bytes() == \
               (tmp_path / "two" / "c.csv").read_bytes()


class TestCompare:
    def test_identical_families_n3(self, tmp_path):
        r = run_cli(["compare", "--n", "3", "--p", "0.8:0.9:0.1",
                     "--out", "cmp.csv"], tmp_path)
        assert r.returncode == 0, r.stderr
        lines = (tmp_path / "cmp.csv").read_text().strip().split("\n")
        assert lines[0] == "n,p,eps_star_phase,eps_star_platonic,eps_gap"
        for row in lines[1:]:
            _, _, e_ph, e_pl, gap = row.split(",")
            assert abs(float(e_ph) - float(e_pl)) < 1e-6
            assert abs(float(gap)) < 1e-6

    def test_unsupported_n_exits_1(self, tmp_path):
        r = run_cli(["compare", "--n", "5", "--p", "0.9:0.9:1",
                     "--out", "cmp.csv"], tmp_path)
        assert r.returncode == 1


class TestLhsBound:
    def test_phase_n2(self, tmp_path):
        r = run_cli(["lhs-bound", "--n", "2", "--family", "phase"], tmp_path)
        assert r.returncode == 0
        assert abs(float(r.stdout.strip()) - 0.7071067812) < 1e-9

    def test_phase_n3(self, tmp_path):
        r = run_cli(["lhs-bound", "--n", "3", "--family", "phase"], tmp_path)
        assert abs(float(r.stdout.strip()) - 0.5773502692) < 1e-9

    def test_custom_single_setting(self, tmp_path):
        doc = {"family": "custom",
               "measurements": [{"label": "M0", "bloch": [0, 0, 1]}]}
        path = tmp_path / "set.json"
        path.write_text(json.dumps(doc))
        r = run_cli(["lhs-bound", "--family", "custom", "--set", str(path)],
                    tmp_path)
        assert r.returncode == 0
        assert abs(float(r.stdout.strip()) - 1.0) < 1e-12

    def test_missing_n_exits_1(self, tmp_path):
        r = run_cli(["lhs-bound", "--family", "phase"], tmp_path)
        assert r.returncode == 1


class TestSimulate:
    def _write_config(self, tmp_path, **overrides):
        cfg = ExperimentConfig(**{"n_settings": 9, "seed": 404, **overrides})
        path = tmp_path / "cfg.json"
        path.write_text(cfg.to_json())
        return path

    def test_passing_run(self, tmp_path):
        path = self._write_config(tmp_path)
        r = run_cli(["simulate", "--config", str(path), "--out", "run"],
                    tmp_path)
        assert r.returncode == 0, r.stderr
        verdict = json.loads((tmp_path / "run.verdict.json").read_text())
        assert verdict["passed"] is True
        assert verdict["margin"] > 3
        assert verdict["manifest"] == "run.manifest.json"
        hist_lines = (tmp_path / "run.histograms.csv").read_text().split("\n")
        assert hist_lines[0] == "pair,setting,bin,count"
        manifest = json.loads((tmp_path / "run.manifest.json").read_text())
        assert manifest["seed"] == 404
        assert manifest["outputs"] == ["run.verdict.json",
                                       "run.histograms.csv",
                                       "run.histograms.json"]
        hist_doc = json.loads((tmp_path / "run.histograms.json").read_text())
        assert hist_doc["manifest"] == "run.manifest.json"

    def test_low_efficiency_exits_3(self, tmp_path):
        path = self._write_config(tmp_path, alice_loss_db=(("total", 10.2),))
        r = run_cli(["simulate", "--config", str(path), "--out", "run"],
                    tmp_path)
        assert r.returncode == 3
        verdict = json.loads((tmp_path / "run.verdict.json").read_text())
        assert verdict["passed"] is False

    def test_negative_db_exits_1(self, tmp_path):
        path = tmp_path / "bad.json"
        doc = ExperimentConfig(n_settings=9).to_doc()
        doc["alice_loss_db"] = [["oops", -2.0]]
        path.write_text(json.dumps(doc))
        r = run_cli(["simulate", "--config", str(path), "--out", "run"],
                    tmp_path)
        assert r.returncode == 1
        assert "alice_loss_db" in r.stderr
        # manifest still written, carrying the error
        manifest = json.loads((tmp_path / "run.manifest.json").read_text())
        assert manifest["error"]

    def test_malformed_json_exits_1(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        r = run_cli(["simulate", "--config", str(path), "--out", "run"],
                    tmp_path)
        assert r.returncode == 1

    def test_seed_override_changes_histograms(self, tmp_path):
        path = self._write_config(tmp_path, duration_s=0.2)
        for sub, seed in (("a", "1"), ("b", "2"), ("c", "1")):
            (tmp_path / sub).mkdir()
            r = run_cli(["simulate", "--config", str(path), "--seed", seed,
                         "--out", "run"], tmp_path / sub)
            assert r.returncode in (0, 3), r.stderr
        h = lambda s: (tmp_path / s / "run.histograms.csv").read_bytes()
        assert h("a") != h("b")
        assert h("a") == h("c")  # same seed: byte-identical


class TestGlobal:
    def test_version(self, tmp_path):
        r = run_cli(["--version"], tmp_path)
        assert r.returncode == 0
        assert "steerkit" in r.stdout

    def test_unknown_option_exits_1(self, tmp_path):
        r = run_cli(["bounds", "--wat"], tmp_path)
        assert r.returncode == 1

    def test_no_command_exits_1(self, tmp_path):
        r = run_cli([], tmp_path)
        assert r.returncode in (0, 1)  # bare group prints help

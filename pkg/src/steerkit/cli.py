"""Command-line surface: bound curves, family comparison, simulated tests.

Exit codes: 0 success (or steering test passed), 1 usage/config error,
2 solver failure, 3 steering test failed.  Every command writes a JSON run
manifest next to its outputs; outputs are deterministic given the manifest
(seed included) and CSV files are byte-stable across identical runs.
"""

from __future__ import annotations

import datetime
import json
import os
import sys

import click

from . import __version__
from .errors import CalibrationError, EstimateError, SolverFailure, VerdictUnavailable
from .experiment import ExperimentConfig, run_experiment
from .lhs import bound_curve, bound_points_to_csv, bound_points_to_doc, \
    critical_epsilon, lossless_lhs_bound
from .measurements import MeasurementSet, phase_encoding_set, platonic_set, \
    PLATONIC_SUPPORTED

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SOLVER = 2
EXIT_TEST_FAILED = 3


def _parse_n_range(text):
    """'6' -> [6]; '6-9' -> [6, 7, 8, 9]."""
    try:
        if "-" in text:
            lo, hi = text.split("-", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(text)]
    except ValueError:
        raise click.UsageError(f"invalid n range {text!r} (use 'N' or 'LO-HI')")


def _parse_grid(text):
    """'start:stop:step' -> inclusive-of-start, stop-bounded float grid."""
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":", 2))
            if step <= 0 or stop < start:
                raise ValueError
            values = []
            v = start
            while v <= stop + 1e-12:
                values.append(round(v, 12))
                v = start + step * (len(values))
            return values
        return [float(text)]
    except ValueError:
        raise click.UsageError(
            f"invalid grid {text!r} (use 'start:stop:step' with step > 0)")


def _default_threads():
    try:
        return max(1, int(os.environ.get("STEERKIT_THREADS", "1")))
    except ValueError:
        return 1


def _utcnow():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


class _Manifest:
    """Run record: command, resolved parameters, version, seed, outputs."""

    def __init__(self, command, params, seed=None):
        self.doc = {
            "command": command,
            "argv": sys.argv[1:],
            "tool_version": __version__,
            "params": params,
            "seed": seed,
            "started_at": _utcnow(),
            "finished_at": None,
            "outputs": [],
            "error": None,
        }

    def add_output(self, path):
        self.doc["outputs"].append(str(path))

    def write(self, path, error=None):
        self.doc["finished_at"] = _utcnow()
        self.doc["error"] = error
        with open(path, "w") as fh:
            json.dump(self.doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _base_path(out_path, strip=(".csv", ".json")):
    base = str(out_path)
    for suffix in strip:
        if base.endswith(suffix):
            return base[: -len(suffix)]
    return base


def _load_settings(family, n, set_path):
    if family == "custom":
        if not set_path:
            raise click.UsageError("--family custom requires --set FILE")
        with open(set_path) as fh:
            ms = MeasurementSet.from_json(fh.read())
        if n is not None and ms.n != n:
            raise click.UsageError(
                f"custom set has {ms.n} measurements, --n says {n}")
        return ms
    if family in ("phase", "phase_encoding"):
        return phase_encoding_set(n)
    if family == "platonic":
        return platonic_set(n)
    raise click.UsageError(f"unknown family {family!r}")


@click.group(name="steerkit")
@click.version_option(version=__version__, prog_name="steerkit")
def cli():
    """Detection-loophole-free steering bounds and a time-bin test simulator."""


@cli.command()
@click.option("--n", "n_text", required=True,
              help="Settings count, single value or range (e.g. 6-9).")
@click.option("--family", default="phase", show_default=True,
              type=click.Choice(["phase", "platonic"]))
@click.option("--eps", "eps_text", required=True,
              help="Efficiency grid start:stop:step, inclusive of start, "
                   "bounded by stop.")
@click.option("--tol", default=1e-7, show_default=True, type=float,
              help="Solver duality-gap tolerance.")
@click.option("--method", default="auto", show_default=True,
              type=click.Choice(["auto", "full", "rowgen"]))
@click.option("--threads", default=None, type=int,
              help="Grid-point parallelism (default: STEERKIT_THREADS or 1).")
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Output CSV path; JSON sidecar and manifest go next to it.")
def bounds(n_text, family, eps_text, tol, method, threads, out_path):
    """Critical p* versus detection efficiency for one or more n."""
    ns = _parse_n_range(n_text)
    grid = _parse_grid(eps_text)
    if any(not (0.0 < e <= 1.0) for e in grid):
        raise click.UsageError("efficiency grid values must lie in (0, 1]")
    threads = threads if threads is not None else _default_threads()
    base = _base_path(out_path)
    manifest = _Manifest("bounds", {
        "n": ns, "family": family, "eps_grid": grid, "tol": tol,
        "method": method, "threads": threads,
    })

    points = []
    for n in ns:
        if family == "platonic" and n not in PLATONIC_SUPPORTED:
            raise click.UsageError(
                f"platonic family supports n in {PLATONIC_SUPPORTED}, got {n}")
        points.extend(bound_curve(n, family, grid, tol=tol, method=method,
                                  threads=threads))

    csv_path = base + ".csv"
    json_path = base + ".json"
    with open(csv_path, "w") as fh:
        fh.write(bound_points_to_csv(points))
    sidecar = {"manifest": os.path.basename(base + ".manifest.json"),
               "points": bound_points_to_doc(points)}
    with open(json_path, "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.add_output(csv_path)
    manifest.add_output(json_path)
    manifest.write(base + ".manifest.json")

    failed = sum(1 for pt in points if pt.status == "failed")
    click.echo(f"wrote {len(points)} bound points to {csv_path}"
               + (f" ({failed} failed)" if failed else ""))
    if failed:
        sys.exit(EXIT_SOLVER)


@cli.command()
@click.option("--n", "n_value", required=True, type=int,
              help="Settings count (must be supported by both families).")
@click.option("--p", "p_text", required=True,
              help="Entangled-fraction grid start:stop:step, inclusive of "
                   "start, bounded by stop.")
@click.option("--tol", default=1e-7, show_default=True, type=float)
@click.option("--out", "out_path", required=True, type=click.Path())
def compare(n_value, p_text, tol, out_path):
    """Critical efficiency of phase-encoding vs Platonic settings."""
    if n_value not in PLATONIC_SUPPORTED:
        raise click.UsageError(
            f"platonic family supports n in {PLATONIC_SUPPORTED}, got {n_value}")
    grid = _parse_grid(p_text)
    if any(not (0.0 < p <= 1.0) for p in grid):
        raise click.UsageError("p grid values must lie in (0, 1]")
    base = _base_path(out_path)
    manifest = _Manifest("compare", {"n": n_value, "p_grid": grid, "tol": tol})

    phase = phase_encoding_set(n_value)
    plat = platonic_set(n_value)
    lines = ["n,p,eps_star_phase,eps_star_platonic,eps_gap"]
    for p in grid:
        e_phase = critical_epsilon(n_value, p, phase, tol=tol)
        e_plat = critical_epsilon(n_value, p, plat, tol=tol)
        gap = e_plat.epsilon - e_phase.epsilon
        lines.append(f"{n_value},{p:.10g},{e_phase.epsilon:.10g},"
                     f"{e_plat.epsilon:.10g},{gap:.10g}")

    csv_path = base + ".csv"
    with open(csv_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    manifest.add_output(csv_path)
    manifest.write(base + ".manifest.json")
    click.echo(f"wrote {len(grid)} comparison rows to {csv_path}")


@cli.command(name="lhs-bound")
@click.option("--n", "n_value", type=int, default=None,
              help="Settings count (required unless --set is given).")
@click.option("--family", default="phase", show_default=True,
              type=click.Choice(["phase", "platonic", "custom"]))
@click.option("--set", "set_path", type=click.Path(exists=True), default=None,
              help="JSON measurement-set file for --family custom.")
def lhs_bound(n_value, family, set_path):
    """Lossless deterministic LHS bound on S_n (brute-force enumeration)."""
    if family != "custom" and n_value is None:
        raise click.UsageError("--n is required for built-in families")
    settings = _load_settings(family, n_value, set_path)
    click.echo(f"{lossless_lhs_bound(settings):.10g}")


@cli.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True), help="Experiment config JSON.")
@click.option("--seed", default=None, type=int, help="Override config seed.")
@click.option("--conservative", is_flag=True,
              help="Evaluate the bound at the lower efficiency edge.")
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Output base path (suffixes .verdict.json etc. added).")
def simulate(config_path, seed, conservative, out_path):
    """Run the simulated steering test end to end and render a verdict."""
    base = _base_path(out_path)
    manifest_path = base + ".manifest.json"
    try:
        with open(config_path) as fh:
            doc = json.load(fh)
        if seed is not None:
            doc["seed"] = seed
        config = ExperimentConfig.from_doc(doc)
    except (json.JSONDecodeError, ValueError, TypeError) as exc:
        manifest = _Manifest("simulate", {"config_path": str(config_path)},
                             seed=seed)
        manifest.write(manifest_path, error=str(exc))
        raise click.UsageError(f"bad config: {exc}")

    manifest = _Manifest("simulate", {"config": config.to_doc(),
                                      "conservative": conservative},
                         seed=config.seed)
    try:
        result = run_experiment(config, conservative=conservative)
    except (SolverFailure, VerdictUnavailable, EstimateError) as exc:
        manifest.write(manifest_path, error=str(exc))
        click.echo(f"solver/estimator failure: {exc}", err=True)
        sys.exit(EXIT_SOLVER)

    verdict_path = base + ".verdict.json"
    hist_path = base + ".histograms.csv"
    hist_json_path = base + ".histograms.json"
    vdoc = result.verdict.to_doc()
    vdoc["klyshko"] = {
        "alice": result.klyshko.alice, "alice_err": result.klyshko.alice_err,
        "bob": result.klyshko.bob, "bob_err": result.klyshko.bob_err,
        "coincidences": result.klyshko.coincidences,
    }
    vdoc["manifest"] = os.path.basename(manifest_path)
    with open(verdict_path, "w") as fh:
        json.dump(vdoc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(hist_path, "w") as fh:
        fh.write(result.histograms.to_csv())
    hdoc = result.histograms.to_doc()
    hdoc["manifest"] = os.path.basename(manifest_path)
    with open(hist_json_path, "w") as fh:
        json.dump(hdoc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.add_output(verdict_path)
    manifest.add_output(hist_path)
    manifest.add_output(hist_json_path)
    manifest.write(manifest_path)

    v = result.verdict
    click.echo(f"S_{v.n} = {v.s_n.value:.5f} +- {v.s_n.std_err:.5f}  "
               f"epsilon_hat = {v.epsilon_hat:.5f}  p* = {v.p_star_at_epsilon:.5f}  "
               f"passed = {v.passed}  margin = {v.margin:.2f} se")
    if not v.passed:
        sys.exit(EXIT_TEST_FAILED)


def main():
    """Entry point enforcing the documented exit-code contract."""
    try:
        cli.main(standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        sys.exit(EXIT_USAGE)
    except click.ClickException as exc:
        exc.show()
        sys.exit(EXIT_USAGE)
    except click.exceptions.Abort:
        sys.exit(EXIT_USAGE)
    except (SolverFailure, VerdictUnavailable) as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    except (ValueError, EstimateError, CalibrationError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)


if __name__ == "__main__":
    main()

import json

import numpy as np
import pytest
from typer.testing import CliRunner

from app import cli
from app.config import settings
from app.exceptions import ConvergenceError
from app.schemas.ranking import ParetoParams, Trajectory
from app.services import io, pareto

runner = CliRunner()

THREAD = ParetoParams(N=795, a=3.3425e-4, b=0.6145)


@pytest.fixture
def mixture_file(tmp_path, two_component):
    path = tmp_path / "mixture.json"
    io.dump_mixture(two_component, path)
    return path


@pytest.fixture
def thread_csv(tmp_path):
    times = np.linspace(10.0, 3000.0, 60)
    traj = Trajectory(label="thread", times=tuple(times), ranks=tuple(pareto.rank_trajectory(THREAD, times)), jump_t=0.0)
    path = tmp_path / "thread.csv"
    io.emit_trajectories([traj], path)
    return path


def test_front_for_pareto_parameters():
    result = runner.invoke(cli.app, ["front", "--N", "795", "--a", "3.3425e-4", "--b", "0.6145",
                                     "--t-max", "12", "--dt", "0.25"])
    assert result.exit_code == 0, result.output
    lines = result.stdout.splitlines()
    assert lines[0] == "t,x_C"
    assert len(lines) == 50
    assert lines[1] == "0.0,1.0"
    assert lines[-1].startswith("12.0,")


def test_front_for_a_mixture(mixture_file):
    result = runner.invoke(cli.app, ["front", "--mixture", str(mixture_file), "--t-max", "1", "--dt", "0.5"])
    assert result.exit_code == 0, result.output
    lines = result.stdout.splitlines()
    assert lines[0] == "t,y_C"
    assert float(lines[-1].split(",")[1]) == pytest.approx(0.5 * (1 - np.exp(-1.0)))


def test_front_needs_one_source(mixture_file):
    result = runner.invoke(cli.app, ["front", "--t-max", "1", "--dt", "0.5"])
    assert result.exit_code != 0
    result = runner.invoke(cli.app, ["front", "--N", "10", "--t-max", "1", "--dt", "0.5"])
    assert result.exit_code != 0


def test_evaluate_reports_branches(mixture_file):
    result = runner.invoke(cli.app, ["evaluate", "--mixture", str(mixture_file),
                                     "--y", "0.2", "--y", "0.9", "--t", "1.0"])
    assert result.exit_code == 0, result.output
    header, first, second = result.stdout.splitlines()
    assert header == "y,t,branch,v,u_0,u_1"
    assert first.split(",")[2] == "stationary"
    assert second.split(",")[2] == "wave"


def test_evaluate_rejects_points_outside_domain(mixture_file):
    result = runner.invoke(cli.app, ["evaluate", "--mixture", str(mixture_file), "--y", "1.5", "--t", "1.0"])
    assert result.exit_code == 1


def test_verify_report(mixture_file):
    result = runner.invoke(cli.app, ["verify", "--mixture", str(mixture_file), "--points", "5"])
    assert result.exit_code == 0, result.output
    report = json.loads(result.stdout)
    assert "residual_max" in report
    assert report["residual_max"] <= 1e-6


def test_fit_with_fixed_n(thread_csv, tmp_path):
    residuals = tmp_path / "residuals.csv"
    result = runner.invoke(cli.app, ["fit", "--data", str(thread_csv), "--fix-N", "795",
                                     "--residuals", str(residuals)])
    assert result.exit_code == 0, result.output
    report = json.loads(result.stdout)
    assert report["a"] == pytest.approx(THREAD.a, rel=1e-6)
    assert report["b"] == pytest.approx(THREAD.b, rel=1e-6)
    assert report["N"] == 795
    assert report["n_d"] == 60
    assert len(residuals.read_text().splitlines()) == 61


def test_fit_rejects_conflicting_n_options(thread_csv):
    result = runner.invoke(cli.app, ["fit", "--data", str(thread_csv), "--fix-N", "795", "--N-guess", "900"])
    assert result.exit_code != 0


def test_fit_bad_data_exits_with_one(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,rank\n0.0,0\n")
    result = runner.invoke(cli.app, ["fit", "--data", str(bad)])
    assert result.exit_code == 1
    assert "line 2" in result.output


def test_fit_non_convergence_exits_with_two(thread_csv, monkeypatch):
    def diverge(problem):
        raise ConvergenceError("no progress")

    monkeypatch.setattr(cli, "run_fit", diverge)
    result = runner.invoke(cli.app, ["fit", "--data", str(thread_csv), "--fix-N", "795"])
    assert result.exit_code == 2


def test_fit_stopped_at_iteration_cap_exits_with_two(thread_csv, monkeypatch):
    monkeypatch.setattr(settings, "FIT_MAX_NFEV", 2)
    result = runner.invoke(cli.app, ["fit", "--data", str(thread_csv), "--fix-N", "795", "--single-start"])
    assert result.exit_code == 2
    report = json.loads(result.stdout)
    assert report["converged"] is False


def test_simulate_is_reproducible(tmp_path):
    outputs = []
    for name in ("first", "second"):
        events, tracked = tmp_path / f"{name}.csv", tmp_path / f"{name}-tracked.csv"
        result = runner.invoke(cli.app, [
            "simulate", "--N", "200", "--a", "1", "--b", "0.5", "--horizon", "0.5", "--seed", "31",
            "--interval", "0.05", "--track", "199", "--start-at-front",
            "--events", str(events), "--tracked", str(tracked),
        ])
        assert result.exit_code == 0, result.output
        summary = json.loads(result.stdout)
        assert summary["particles"] == 200
        outputs.append((events.read_text(), tracked.read_text()))
    assert outputs[0] == outputs[1]
    assert outputs[0][0].startswith("# rng=numpy.PCG64 seed=31")
    assert outputs[0][1].startswith("label,t,rank,jump_t\n199/0,0.0,1,0.0\n")


def test_simulate_from_mixture(make_mixture, tmp_path):
    mixture_file = tmp_path / "positive.json"
    io.dump_mixture(make_mixture((1.0, 0.5), (2.0, 0.5)), mixture_file)
    events = tmp_path / "events.csv"
    result = runner.invoke(cli.app, ["simulate", "--mixture", str(mixture_file), "--particles", "10",
                                     "--horizon", "1", "--initial-order", "by-rate", "--events", str(events)])
    assert result.exit_code == 0, result.output
    assert json.loads(result.stdout)["particles"] == 10


def test_simulate_with_zero_rate_particles_exits_with_one(mixture_file):
    # half of the mixture never evaporates, so untracked runs see rate-0 particles
    result = runner.invoke(cli.app, ["simulate", "--mixture", str(mixture_file), "--particles", "10",
                                     "--horizon", "1"])
    assert result.exit_code == 1


def test_pareto_check():
    result = runner.invoke(cli.app, ["pareto-check", "--N", "1000", "--a", "0.01", "--b", "0.6145"])
    assert result.exit_code == 0, result.output
    report = json.loads(result.stdout)
    assert report["recurrence_max"] <= 1e-10
    assert report["identity_max"] <= 1e-9
    assert report["discrete_gap"] is not None
    assert report["short_time_ratio"] == pytest.approx(1.0, rel=1e-2)


def test_pareto_check_rejects_excluded_exponent():
    result = runner.invoke(cli.app, ["pareto-check", "--N", "10", "--a", "1", "--b", "1"])
    assert result.exit_code == 1


def test_run_maps_usage_errors_to_one():
    assert cli.run(["front", "--bogus"]) == 1


def test_run_returns_zero_on_success(capsys):
    assert cli.run(["front", "--N", "10", "--a", "1", "--b", "0.5", "--t-max", "1", "--dt", "1"]) == 0
    assert capsys.readouterr().out.startswith("t,x_C\n")


def test_front_out_file_matches_stdout(tmp_path):
    args = ["front", "--N", "795", "--a", "3.3425e-4", "--b", "0.6145", "--t-max", "2", "--dt", "0.5"]
    printed = runner.invoke(cli.app, args)
    out = tmp_path / "front.csv"
    written = runner.invoke(cli.app, args + ["--out", str(out)])
    assert printed.exit_code == written.exit_code == 0
    assert out.read_text() == printed.stdout
    assert written.stdout == ""

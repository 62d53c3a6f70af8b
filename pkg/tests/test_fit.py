import math

import numpy as np
import pytest
from pydantic import ValidationError

from app.config import settings
from app.exceptions import DomainValidationError
from app.schemas.ranking import FitModel, FitProblem, ParetoParams, Trajectory
from app.services import pareto
from app.services.fit import fit, objective, time_shift_align

THREAD = ParetoParams(N=795, a=3.3425e-4, b=0.6145)
STORE = ParetoParams(N=8.57e5, a=3.939e-4, b=0.6312)


def _thread_data(noise: float = 0.0, seed: int = 0, points: int = 117) -> Trajectory:
    times = np.linspace(10.0, 3000.0, points)
    ranks = pareto.rank_trajectory(THREAD, times)
    if noise:
        ranks = np.maximum(ranks + np.random.default_rng(seed).normal(0.0, noise, points), 1.0)
    return Trajectory(label="thread", times=tuple(times), ranks=tuple(ranks), jump_t=0.0)


def _fixed(trajectories, n=THREAD.N, **kwargs) -> FitProblem:
    return FitProblem(trajectories=tuple(trajectories), model=FitModel.fixed_n, N=n, **kwargs)


def test_noiseless_fixed_n_recovery():
    result = fit(_fixed([_thread_data()]))
    assert result.converged
    assert result.a == pytest.approx(THREAD.a, rel=1e-6)
    assert result.b == pytest.approx(THREAD.b, rel=1e-6)
    assert result.N == THREAD.N
    assert result.n_d == 117
    assert result.n_params == 2
    assert result.offsets == []


def test_noisy_fixed_n_recovery():
    sigma = 0.01 * THREAD.N
    result = fit(_fixed([_thread_data(noise=sigma, seed=42)]))
    assert result.a == pytest.approx(THREAD.a, rel=0.05)
    assert result.b == pytest.approx(THREAD.b, rel=0.05)
    assert 0.5 * sigma <= result.rms <= 2.0 * sigma
    assert result.rms ** 2 * result.n_d == pytest.approx(result.chi2, rel=1e-9)
    assert len(result.residuals) == result.n_d


def test_free_n_recovery_with_unknown_offset():
    tau = 5.0
    elapsed = np.geomspace(1.0, 1995.0, 80)
    trajectory = Trajectory(
        label="item",
        times=tuple(tau + elapsed),
        ranks=tuple(pareto.rank_trajectory(STORE, elapsed)),
        offset_unknown=True,
    )
    problem = FitProblem(
        trajectories=(trajectory,),
        model=FitModel.free_n,
        N_guess=1.2e6,
        a_guess=5e-4,
        b_guess=0.6,
    )
    result = fit(problem)
    assert result.a == pytest.approx(STORE.a, rel=0.05)
    assert result.b == pytest.approx(STORE.b, rel=0.05)
    assert result.N == pytest.approx(STORE.N, rel=0.05)
    assert result.offsets[0] == pytest.approx(tau, rel=0.05)
    assert result.n_params == 4


def test_free_n_guess_below_largest_rank_is_moved_up():
    result = fit(FitProblem(trajectories=(_thread_data(),), model=FitModel.free_n, N_guess=10.0))
    assert result.N >= max(_thread_data().ranks)


def test_joint_fit_of_several_trajectories():
    trajectories = []
    for k, jump in enumerate((0.0, 40.0, 75.5)):
        times = np.linspace(1.0, 2500.0, 30) + 7.0 * k
        trajectories.append(Trajectory(
            label=f"t{k}",
            times=tuple(jump + times),
            ranks=tuple(pareto.rank_trajectory(THREAD, times)),
            jump_t=jump,
        ))
    result = fit(_fixed(trajectories))
    assert result.a == pytest.approx(THREAD.a, rel=1e-6)
    assert result.b == pytest.approx(THREAD.b, rel=1e-6)
    assert result.n_d == 90


def test_scale_consistency():
    data = _thread_data(noise=5.0, seed=3)
    scale = 3.0
    scaled = Trajectory(
        label=data.label,
        times=data.times,
        ranks=tuple(1.0 + scale * (r - 1.0) for r in data.ranks),
        jump_t=0.0,
    )
    base = fit(_fixed([data]))
    rescaled = fit(_fixed([scaled], n=scale * THREAD.N))
    assert rescaled.a == pytest.approx(base.a, rel=1e-6)
    assert rescaled.b == pytest.approx(base.b, rel=1e-6)


def test_excluded_interval_removes_outliers():
    data = _thread_data()
    ranks = list(data.ranks)
    bumped = [k for k, t in enumerate(data.times) if 1000.0 <= t <= 1200.0]
    for k in bumped:
        ranks[k] += 50.0
    dirty = Trajectory(label="dirty", times=data.times, ranks=tuple(ranks), jump_t=0.0)
    result = fit(_fixed([dirty], exclude=((1000.0, 1200.0),)))
    assert result.n_d == 117 - len(bumped)
    assert result.a == pytest.approx(THREAD.a, rel=1e-6)
    assert result.b == pytest.approx(THREAD.b, rel=1e-6)


def test_zero_weights_match_exclusion():
    data = _thread_data(noise=4.0, seed=9)
    weights = tuple(0.0 if 500.0 <= t <= 900.0 else 1.0 for t in data.times)
    weighted = fit(_fixed([data], weights=(weights,)))
    excluded = fit(_fixed([data], exclude=((500.0, 900.0),)))
    assert weighted.a == pytest.approx(excluded.a, rel=1e-6)
    assert weighted.b == pytest.approx(excluded.b, rel=1e-6)
    assert weighted.chi2 == pytest.approx(excluded.chi2, rel=1e-6)


def test_parallel_starts_give_the_same_result(monkeypatch):
    problem = _fixed([_thread_data(noise=8.0, seed=1)])
    sequential = fit(problem)
    monkeypatch.setattr(settings, "FIT_WORKERS", 4)
    parallel = fit(problem)
    assert parallel.model_dump() == sequential.model_dump()


def test_objective_vanishes_at_truth():
    chi2, gradient = objective(_fixed([_thread_data()]), [THREAD.a, THREAD.b])
    assert chi2 == 0.0
    np.testing.assert_allclose(gradient, 0.0, atol=1e-8)


def test_objective_gradient_matches_finite_differences():
    known = _thread_data(noise=8.0, seed=5, points=40)
    elapsed = np.linspace(2.0, 2000.0, 30)
    shifted = Trajectory(
        label="late",
        times=tuple(12.0 + elapsed),
        ranks=tuple(pareto.rank_trajectory(THREAD, elapsed)),
        offset_unknown=True,
    )
    problem = _fixed([known, shifted])
    rng = np.random.default_rng(13)
    for _ in range(50):
        params = np.array([
            THREAD.a * rng.uniform(0.7, 1.3),
            rng.uniform(0.45, 0.8),
            rng.uniform(1.0, 13.0),
        ])
        chi2, gradient = objective(problem, params)
        for j in range(params.size):
            h = 1e-6 * params[j]
            up, down = params.copy(), params.copy()
            up[j] += h
            down[j] -= h
            numeric = (objective(problem, up)[0] - objective(problem, down)[0]) / (2 * h)
            assert gradient[j] == pytest.approx(numeric, rel=1e-5, abs=1e-8 * chi2 / params[j])


def test_objective_rejects_bad_parameters():
    problem = _fixed([_thread_data()])
    with pytest.raises(DomainValidationError):
        objective(problem, [THREAD.a])
    with pytest.raises(DomainValidationError):
        objective(problem, [THREAD.a, 1.0])
    with pytest.raises(DomainValidationError):
        objective(problem, [-THREAD.a, 0.5])


def test_time_shift_align():
    known = Trajectory(times=(5.0, 6.0), ranks=(1.0, 3.0), jump_t=4.0)
    unknown = Trajectory(times=(5.0, 6.0), ranks=(1.0, 3.0), offset_unknown=True)
    aligned = time_shift_align([known, unknown])
    assert aligned[0].times == (1.0, 2.0)
    assert aligned[0].raw_times == (5.0, 6.0)
    assert aligned[1].times == (5.0, 6.0)
    assert aligned[1].offset_unknown


@pytest.mark.parametrize("trajectory", [
    Trajectory(times=(1.0, 2.0), ranks=(1.0, 2.0)),
    Trajectory(times=(1.0, 2.0), ranks=(1.0, 2.0), jump_t=1.5),
    Trajectory(times=(1.0, 2.0), ranks=(1.0, 2.0), jump_t=0.0, offset_unknown=True),
])
def test_time_shift_align_rejects(trajectory):
    with pytest.raises(DomainValidationError):
        time_shift_align([trajectory])


def test_problem_validation():
    data = _thread_data()
    with pytest.raises(ValidationError, match="below the largest observed rank"):
        _fixed([data], n=100.0)
    with pytest.raises(ValidationError, match="free-N"):
        FitProblem(trajectories=(data,), model=FitModel.free_n, N=795.0)
    with pytest.raises(ValidationError, match="inside"):
        _fixed([data], b_bounds=(0.5, 1.5))
    with pytest.raises(ValidationError, match="fewer than 2"):
        _fixed([Trajectory(times=(1.0,), ranks=(2.0,), jump_t=0.0)])
    with pytest.raises(ValidationError):
        _fixed([data], weights=((1.0,),))


def test_trajectory_validation():
    with pytest.raises(ValidationError):
        Trajectory(times=(1.0, 1.0), ranks=(1.0, 2.0))
    with pytest.raises(ValidationError):
        Trajectory(times=(1.0, 2.0), ranks=(0.0, 2.0))
    with pytest.raises(ValidationError):
        Trajectory(times=(1.0, 2.0), ranks=(1.0,))


def test_too_few_points():
    tiny = Trajectory(times=(2.0, 3.0), ranks=(10.0, 12.0), offset_unknown=True)
    with pytest.raises(DomainValidationError):
        fit(FitProblem(trajectories=(tiny,), model=FitModel.free_n))


def test_report_keys():
    report = fit(_fixed([_thread_data()])).report()
    assert list(report) == ["a", "b", "N", "offsets", "chi2", "n_d", "rms", "converged", "iterations"]
    assert math.isfinite(report["chi2"])


def test_duplicated_points_with_half_weight_leave_objective_unchanged():
    data = _thread_data(noise=6.0, seed=17, points=50)
    twin = data.model_copy(update={"label": "twin"})
    halves = tuple(0.5 for _ in data.times)
    single = _fixed([data])
    doubled = _fixed([data, twin], weights=(halves, halves))
    for params in ([THREAD.a, THREAD.b], [2.0 * THREAD.a, 0.4], [0.6 * THREAD.a, 0.8]):
        chi2, gradient = objective(single, params)
        chi2_doubled, gradient_doubled = objective(doubled, params)
        assert chi2_doubled == pytest.approx(chi2, rel=1e-12)
        np.testing.assert_allclose(gradient_doubled, gradient, rtol=1e-10)


@pytest.mark.parametrize("multi_start", [True, False])
def test_fit_does_not_end_above_its_start(multi_start):
    known = _thread_data(noise=8.0, seed=23)
    elapsed = np.linspace(2.0, 2000.0, 30)
    shifted = Trajectory(
        label="late",
        times=tuple(12.0 + elapsed),
        ranks=tuple(pareto.rank_trajectory(THREAD, elapsed)),
        offset_unknown=True,
    )
    problem = _fixed([known, shifted], multi_start=multi_start)
    start, _ = objective(problem, [problem.a_guess, problem.b_guess, 0.5 * shifted.times[0]])
    assert fit(problem).chi2 <= start

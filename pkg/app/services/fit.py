"""
Least-squares fit of observed rank trajectories to x_C(t) = 1 + N y_C(t)
with Pareto rates.

All trajectories share (a, b) and N; a trajectory whose jump time is unknown
contributes its own offset tau, so its model is x_C(t - tau). The optimizer
works on unconstrained coordinates (log a, logit b inside its band, log of
N above its floor, logit tau inside [0, first observation]).
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.special import expit, logit

from app.config import settings
from app.exceptions import DomainValidationError
from app.schemas.ranking import AlignedTrajectory, FitModel, FitProblem, FitResult, Trajectory
from app.services.pareto import check_exponent, front_sensitivities

logger = logging.getLogger(__name__)

# multi-start offsets around the guess: factors on a, logit steps on b
_A_FACTORS = (0.5, 1.0, 2.0)
_B_STEPS = (-0.5, 0.0, 0.5)


def time_shift_align(trajectories: Sequence[Trajectory]) -> list[AlignedTrajectory]:
    """Re-zeroes trajectories with a known jump; flags the rest for an offset parameter."""
    aligned = []
    for traj in trajectories:
        raw = np.asarray(traj.times, dtype=float)
        if traj.jump_t is not None and traj.offset_unknown:
            raise DomainValidationError(f"trajectory {traj.label!r} has a jump time and an unknown-offset flag")
        if traj.jump_t is not None:
            times = raw - traj.jump_t
            if times[0] < 0:
                raise DomainValidationError(
                    f"trajectory {traj.label!r} has observations before its jump at t={traj.jump_t!r}"
                )
        elif traj.offset_unknown:
            times = raw
        else:
            raise DomainValidationError(
                f"trajectory {traj.label!r} has neither a jump time nor an unknown-offset flag"
            )
        aligned.append(AlignedTrajectory(
            label=traj.label,
            times=tuple(times.tolist()),
            ranks=traj.ranks,
            raw_times=traj.times,
            offset_unknown=traj.offset_unknown,
        ))
    return aligned


@dataclass(frozen=True)
class _Layout:
    times: np.ndarray
    ranks: np.ndarray
    weights: np.ndarray
    owner: np.ndarray  # offset slot of each point, -1 when the jump time is known
    offsets: tuple[int, ...]  # offset slot of each trajectory, -1 when known or pinned to 0
    caps: np.ndarray  # upper bound of each offset
    free_n: bool
    fixed_n: float | None
    bounds: tuple[tuple[float, float], ...]

    @property
    def n_params(self) -> int:
        return len(self.bounds)


def _layout(problem: FitProblem) -> _Layout:
    aligned = time_shift_align(problem.trajectories)
    free_n = problem.model is FitModel.free_n
    if free_n:
        n_lo, n_hi = problem.N_bounds or (max(problem.max_rank, 2.0), math.inf)
    bounds = [problem.a_bounds, problem.b_bounds] + ([(n_lo, n_hi)] if free_n else [])

    times, ranks, weights, owner, offsets, caps = [], [], [], [], [], []
    for k, traj in enumerate(aligned):
        raw = np.asarray(traj.raw_times)
        keep = np.ones(raw.size, dtype=bool)
        for lo, hi in problem.exclude:
            keep &= ~((raw >= lo) & (raw <= hi))
        slot = -1
        if traj.offset_unknown and traj.times[0] > 0:
            slot = len(caps)
            caps.append(traj.times[0])
            bounds.append((0.0, traj.times[0]))
        offsets.append(slot)
        w = np.ones(raw.size) if problem.weights is None else np.asarray(problem.weights[k], dtype=float)
        times.append(np.asarray(traj.times)[keep])
        ranks.append(np.asarray(traj.ranks, dtype=float)[keep])
        weights.append(w[keep])
        owner.append(np.full(int(keep.sum()), slot))

    layout = _Layout(
        times=np.concatenate(times),
        ranks=np.concatenate(ranks),
        weights=np.concatenate(weights),
        owner=np.concatenate(owner),
        offsets=tuple(offsets),
        caps=np.asarray(caps, dtype=float),
        free_n=free_n,
        fixed_n=problem.N,
        bounds=tuple(bounds),
    )
    if layout.times.size < layout.n_params:
        raise DomainValidationError(
            f"{layout.times.size} data points cannot determine {layout.n_params} parameters"
        )
    return layout


def _check_params(layout: _Layout, params: np.ndarray) -> None:
    if params.shape != (layout.n_params,) or not np.all(np.isfinite(params)):
        raise DomainValidationError(f"expected {layout.n_params} finite parameters, got {params!r}")
    check_exponent(params[1])
    names = ["a", "b"] + (["N"] if layout.free_n else []) + [f"tau_{k}" for k in range(layout.caps.size)]
    for name, value, (lo, hi) in zip(names, params, layout.bounds):
        inclusive = name.startswith("tau") or name == "N"
        inside = lo <= value <= hi if inclusive else lo < value < hi
        if not inside:
            raise DomainValidationError(f"{name}={value!r} outside its bounds ({lo!r}, {hi!r})")


def _model(layout: _Layout, params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Model ranks at every data point and their Jacobian in the external parameters."""
    a, b = params[0], params[1]
    n = params[2] if layout.free_n else layout.fixed_n
    first_tau = 3 if layout.free_n else 2
    taus = params[first_tau:]
    shifted = layout.owner >= 0
    shift = np.zeros(layout.times.size)
    shift[shifted] = taus[layout.owner[shifted]]
    t = np.maximum(layout.times - shift, 0.0)

    y, dy_a, dy_b, dy_t = front_sensitivities(a, b, t)
    jac = np.zeros((t.size, layout.n_params))
    jac[:, 0] = n * dy_a
    jac[:, 1] = n * dy_b
    if layout.free_n:
        jac[:, 2] = y
    for slot in range(taus.size):
        rows = layout.owner == slot
        jac[rows, first_tau + slot] = -n * dy_t[rows]
    return 1.0 + n * y, jac


def objective(problem: FitProblem, params: Sequence[float]) -> tuple[float, np.ndarray]:
    """
    chi^2 = sum_k w_k (x_k - x_C(t_k - tau_k))^2 and its gradient.

    ``params`` is ordered (a, b[, N][, tau_1, ...]), one tau per trajectory
    with an unknown jump time.
    """
    layout = _layout(problem)
    params = np.asarray(params, dtype=float)
    _check_params(layout, params)
    model, jac = _model(layout, params)
    residual = layout.ranks - model
    chi2 = float(np.sum(layout.weights * residual ** 2))
    gradient = -2.0 * jac.T @ (layout.weights * residual)
    return chi2, gradient


def _decode(theta: np.ndarray, bounds) -> tuple[np.ndarray, np.ndarray]:
    values = np.empty_like(theta)
    slopes = np.empty_like(theta)
    for j, (lo, hi) in enumerate(bounds):
        if math.isinf(hi):
            slopes[j] = math.exp(theta[j])
            values[j] = lo + slopes[j]
        else:
            s = expit(theta[j])
            values[j] = lo + (hi - lo) * s
            slopes[j] = (hi - lo) * s * (1.0 - s)
    return values, slopes


def _encode(values: Sequence[float], bounds) -> np.ndarray:
    theta = np.empty(len(bounds))
    for j, (value, (lo, hi)) in enumerate(zip(values, bounds)):
        if math.isinf(hi):
            theta[j] = math.log(max(value - lo, 1e-300))
        else:
            theta[j] = logit(min(max((value - lo) / (hi - lo), 1e-12), 1.0 - 1e-12))
    return theta


def _initial_values(problem: FitProblem, layout: _Layout) -> list[float]:
    values = [problem.a_guess, problem.b_guess]
    if layout.free_n:
        lo, hi = layout.bounds[2]
        guess = problem.N_guess
        if guess is None or not lo < guess < hi:
            # the transformed coordinate diverges on the bounds themselves
            guess = 2.0 * lo if math.isinf(hi) else 0.5 * (lo + hi)
            logger.debug(f"starting N at {guess!r}")
        values.append(guess)
    values.extend(0.5 * layout.caps)
    return values


def _starts(problem: FitProblem, layout: _Layout) -> list[np.ndarray]:
    base = _encode(_initial_values(problem, layout), layout.bounds)
    if not problem.multi_start:
        return [base]
    starts = [base]
    for factor, step in product(_A_FACTORS, _B_STEPS):
        if factor == 1.0 and step == 0.0:
            continue
        values, _ = _decode(base, layout.bounds)
        a = values[0] * factor
        lo, hi = layout.bounds[0]
        if not lo < a < hi:
            continue
        theta = base.copy()
        theta[0] = _encode([a], layout.bounds[:1])[0]
        theta[1] = base[1] + step
        starts.append(theta)
    return starts


def _solve(layout: _Layout, theta0: np.ndarray):
    root_w = np.sqrt(layout.weights)

    def residuals(theta):
        params, _ = _decode(theta, layout.bounds)
        model, _ = _model(layout, params)
        return root_w * (layout.ranks - model)

    def jacobian(theta):
        params, slopes = _decode(theta, layout.bounds)
        _, jac = _model(layout, params)
        return -root_w[:, None] * jac * slopes

    return least_squares(
        residuals,
        theta0,
        jac=jacobian,
        method="lm",
        max_nfev=settings.FIT_MAX_NFEV,
        xtol=1e-12,
        ftol=1e-12,
        gtol=1e-10,
    )


def fit(problem: FitProblem) -> FitResult:
    """Joint least-squares fit of every trajectory in ``problem``; best of the multi-start runs."""
    layout = _layout(problem)
    starts = _starts(problem, layout)

    first, _ = _decode(starts[0], layout.bounds)
    model, _ = _model(layout, first)
    if not np.all(np.isfinite(model)):
        raise DomainValidationError("objective is not finite at the initial guess")

    logger.info(f"fitting {layout.times.size} points with {layout.n_params} parameters from {len(starts)} starts")
    if settings.FIT_WORKERS > 1:
        with ThreadPoolExecutor(max_workers=settings.FIT_WORKERS) as pool:
            outcomes = list(pool.map(lambda theta: _solve(layout, theta), starts))
    else:
        outcomes = [_solve(layout, theta) for theta in starts]

    def rank_key(outcome):
        params, _ = _decode(outcome.x, layout.bounds)
        chi2 = float(np.sum(outcome.fun ** 2))
        return (chi2 if math.isfinite(chi2) else math.inf, *params.tolist())

    best = min(outcomes, key=rank_key)
    params, slopes = _decode(best.x, layout.bounds)
    model, jac = _model(layout, params)
    residuals = layout.ranks - model
    chi2 = float(np.sum(layout.weights * residuals ** 2))
    gradient = 2.0 * (-jac * slopes).T @ (layout.weights * residuals)
    converged = bool(best.status > 0)
    if not converged:
        logger.warning(f"fit stopped after {best.nfev} evaluations without converging: {best.message}")
    logger.debug(f"fit finished: status={best.status}, chi2={chi2!r}")

    n_d = int(layout.times.size)
    first_tau = 3 if layout.free_n else 2
    offsets = [float(params[first_tau + slot]) if slot >= 0 else 0.0
               for slot, traj in zip(layout.offsets, problem.trajectories) if traj.offset_unknown]
    return FitResult(
        a=float(params[0]),
        b=float(params[1]),
        N=float(params[2]) if layout.free_n else float(layout.fixed_n),
        offsets=offsets,
        chi2=chi2,
        n_d=n_d,
        rms=math.sqrt(chi2 / n_d),
        converged=converged,
        iterations=int(best.nfev),
        n_params=layout.n_params,
        gradient_norm=float(np.linalg.norm(gradient)),
        residuals=residuals.tolist(),
    )

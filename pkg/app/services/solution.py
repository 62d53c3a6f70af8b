"""
Closed-form evaluation of the evaporation-driven mixture and numerical
checks of the equations it solves.

Behind the front y_C(t) the densities are stationary and depend on y only
through t_0(y); ahead of it the initial profile is carried along the
Lagrangian map and reweighted by exp(-f_i t).
"""
import logging
import warnings
from typing import Sequence

import numpy as np
from scipy.integrate import quad_vec, solve_ivp
from scipy.special import softmax

from app.config import settings
from app.exceptions import DomainValidationError, GridTooCloseError, QuadratureError, StepSizeError
from app.schemas.mixture import RateMixture
from app.schemas.solution import Branch, ResidualConvergence, SolutionField, StateSample, VerifyReport
from app.services.mixture import (
    Y_MAX,
    _as_times,
    _lagrangian_inverse,
    _lagrangian_map,
    front_inverse,
    front_position,
    front_velocity,
)

logger = logging.getLogger(__name__)

Grid = tuple[Sequence[float], Sequence[float]]


def _check_point(y: float, t: float) -> tuple[float, float]:
    y, t = float(y), float(t)
    if not 0.0 <= y < 1.0:
        raise DomainValidationError(f"position must lie in [0, 1), got {y!r}")
    _as_times(t)
    return y, t


def _stationary(m: RateMixture, t0: float) -> tuple[np.ndarray, float]:
    with np.errstate(divide="ignore"):
        log_weights = np.log(m.rates * m.weights) - m.rates * t0
    return softmax(log_weights), front_velocity(m, t0)


def _wave(s: SolutionField, y: float, t: float, y_front: float) -> tuple[np.ndarray, float]:
    m, p = s.mixture, s.profile
    origin = _lagrangian_inverse(p, m, min(y, Y_MAX), t, y_front)
    with np.errstate(divide="ignore"):
        log_weights = np.log(np.clip(p.values(origin), 0.0, None)) - m.rates * t
    velocity = float((m.rates * np.exp(-m.rates * t)) @ p.tail_mass(origin))
    return softmax(log_weights), velocity


def _evaluate(s: SolutionField, y: float, t: float) -> tuple[np.ndarray, float, Branch]:
    m = s.mixture
    y_front = front_position(m, t)
    if abs(y - y_front) <= settings.FRONT_TOL:
        # one-sided limit from the stationary side, t_0(y_C(t)) = t
        u, v = _stationary(m, t)
        return u, v, Branch.front
    if y < y_front:
        u, v = _stationary(m, front_inverse(m, y))
        return u, v, Branch.stationary
    u, v = _wave(s, y, t, y_front)
    return u, v, Branch.wave


def _off_front(s: SolutionField, y, t) -> tuple[np.ndarray, float]:
    y, t = _check_point(y, t)
    u, v, branch = _evaluate(s, y, t)
    if branch is Branch.front:
        raise DomainValidationError(f"({y!r}, {t!r}) lies on the front; use sample_state")
    return u, v


def density(s: SolutionField, y: float, t: float) -> np.ndarray:
    """u_i(y, t) for every component; undefined on the front itself."""
    return _off_front(s, y, t)[0]


def velocity(s: SolutionField, y: float, t: float) -> float:
    """v(y, t) = sum_j f_j int_y^1 u_j(z, t) dz."""
    return _off_front(s, y, t)[1]


def sample_state(s: SolutionField, y: float, t: float) -> StateSample:
    y, t = _check_point(y, t)
    u, v, branch = _evaluate(s, y, t)
    return StateSample(y=y, t=t, u=tuple(float(x) for x in u), v=float(v), branch=branch)


def breakpoint_images(s: SolutionField, t: float) -> np.ndarray:
    """Current positions of the particles that started on interior profile breakpoints."""
    interior = s.profile.edges[1:-1]
    if interior.size == 0:
        return interior
    return np.atleast_1d(_lagrangian_map(s.profile, s.mixture, interior, float(t)))


def _margin(s: SolutionField, h: float) -> float:
    # the front and the characteristics move no faster than sum_j f_j rho_j
    return 10.0 * h * max(1.0, s.mixture.mean_rate)


def _point_problem(s: SolutionField, y: float, t: float, h: float) -> str | None:
    if y - h < 0 or y + h > Y_MAX or t - h < 0:
        return "stencil leaves the domain"
    margin = _margin(s, h)
    if abs(y - front_position(s.mixture, t)) <= margin:
        return "too close to the front"
    images = breakpoint_images(s, t)
    if images.size and np.min(np.abs(images - y)) <= margin:
        return "too close to a breakpoint image"
    return None


def _pairs(grid: Grid) -> list[tuple[float, float]]:
    ys, ts = (np.atleast_1d(np.asarray(g, dtype=float)) for g in grid)
    if ys.shape != ts.shape:
        raise DomainValidationError("grid y-points and t-points must pair up one to one")
    return list(zip(ys.tolist(), ts.tolist()))


def admissible_grid(s: SolutionField, grid: Grid, h: float) -> Grid:
    """Drops the points of ``grid`` the finite-difference checks would reject."""
    kept = [(y, t) for y, t in _pairs(grid) if _point_problem(s, y, t, h) is None]
    return [y for y, _ in kept], [t for _, t in kept]


def _checked_pairs(s: SolutionField, grid: Grid, h: float) -> list[tuple[float, float]]:
    if not h > 0:
        raise DomainValidationError(f"step must be positive, got {h!r}")
    pairs = _pairs(grid)
    for y, t in pairs:
        problem = _point_problem(s, y, t, h)
        if problem is not None:
            raise GridTooCloseError(f"grid point ({y!r}, {t!r}) rejected at h={h!r}: {problem}")
    return pairs


def verify_pde_residual(s: SolutionField, grid: Grid, h: float) -> float:
    """
    max |du_i/dt + d(v u_i)/dy + f_i u_i| over the grid with centered
    differences of step ``h``. ``grid`` is a pair of equally long sequences
    (y-points, t-points) read as points (y_k, t_k).
    """
    rates = s.mixture.rates
    worst = 0.0
    for y, t in _checked_pairs(s, grid, h):
        u_now, _, _ = _evaluate(s, y, t)
        u_later, _, _ = _evaluate(s, y, t + h)
        u_earlier, _, _ = _evaluate(s, y, t - h)
        u_right, v_right, _ = _evaluate(s, y + h, t)
        u_left, v_left, _ = _evaluate(s, y - h, t)
        residual = (
                (u_later - u_earlier) / (2 * h)
                + (v_right * u_right - v_left * u_left) / (2 * h)
                + rates * u_now
        )
        worst = max(worst, float(np.max(np.abs(residual))))
    logger.debug(f"PDE residual {worst:.3e} at h={h!r} over {len(grid[0])} points")
    return worst


def residual_convergence(s: SolutionField, grid: Grid, steps: Sequence[float]) -> ResidualConvergence:
    """Residuals for successive steps and the ratios residual(h_{k+1}) / residual(h_k)."""
    residuals = [verify_pde_residual(s, grid, h) for h in steps]
    ratios = [
        later / earlier if earlier > 0 else 0.0
        for earlier, later in zip(residuals, residuals[1:])
    ]
    return ResidualConvergence(steps=list(steps), residuals=residuals, ratios=ratios)


def verify_velocity_derivative(s: SolutionField, grid: Grid, h: float) -> float:
    """max |dv/dy + sum_j f_j u_j| with a centered difference in y."""
    rates = s.mixture.rates
    worst = 0.0
    for y, t in _checked_pairs(s, grid, h):
        u_now, _, _ = _evaluate(s, y, t)
        _, v_right, _ = _evaluate(s, y + h, t)
        _, v_left, _ = _evaluate(s, y - h, t)
        worst = max(worst, abs((v_right - v_left) / (2 * h) + float(rates @ u_now)))
    return worst


def verify_conservation(s: SolutionField, t: float, tol: float = 1e-10) -> list[float]:
    """|int_0^1 u_i(z, t) dz - rho_i| per component, integrating each smooth piece separately."""
    _as_times(t)
    if not tol > 0:
        raise DomainValidationError(f"quadrature tolerance must be positive, got {tol!r}")
    t = float(t)
    cuts = np.concatenate([[0.0, front_position(s.mixture, t), 1.0], breakpoint_images(s, t)])
    cuts = np.unique(np.clip(cuts, 0.0, 1.0))

    def integrand(z: float) -> np.ndarray:
        return _evaluate(s, min(z, Y_MAX), t)[0]

    total = np.zeros(s.mixture.size)
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b <= a:
            continue
        piece, error, info = quad_vec(integrand, a, b, epsabs=tol, epsrel=0.0, full_output=True)
        if not info.success:
            raise QuadratureError(f"quadrature on [{a!r}, {b!r}] at t={t!r} failed: {info.message}")
        total += piece
    deviation = np.abs(total - s.mixture.weights)
    logger.debug(f"conservation at t={t!r}: {deviation.tolist()}")
    return deviation.tolist()


def apply_generator(m: RateMixture, masses) -> np.ndarray:
    """(A U)_i = f_i rho_i / (sum_j f_j rho_j) * sum_j f_j U_j - f_i U_i."""
    masses = np.asarray(masses, dtype=float)
    inflow = m.rates * m.weights / m.mean_rate
    return inflow * (m.rates @ masses) - m.rates * masses


def verify_generator_ode(m: RateMixture, horizon: float, tol: float = 1e-10) -> float:
    """
    Integrates dU/dt = A U from U(0) = rho over [0, horizon] and returns the
    largest deviation of any U_i from rho_i.
    """
    if not horizon > 0:
        raise DomainValidationError(f"horizon must be positive, got {horizon!r}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        result = solve_ivp(
            lambda _, masses: apply_generator(m, masses),
            (0.0, float(horizon)),
            m.weights.copy(),
            method="DOP853",
            rtol=tol,
            atol=tol,
        )
    if result.status < 0:
        raise StepSizeError(f"generator ODE integration failed: {result.message}")
    deviation = float(np.max(np.abs(result.y - m.weights[:, None])))
    if deviation > 10 * tol:
        logger.warning(f"generator deviation {deviation:.3e} exceeds 10x tolerance {tol!r}")
    return deviation


def verify(
        s: SolutionField,
        grid: Grid,
        h: float = 1e-4,
        times: Sequence[float] = (0.1, 1.0, 10.0),
        quad_tol: float = 1e-10,
        horizon: float = 10.0,
        ode_tol: float = 1e-10,
) -> VerifyReport:
    """Residual, conservation (worst over ``times``) and generator checks in one report."""
    logger.info(f"verifying field with {s.mixture.size} components on {len(grid[0])} grid points")
    residual = verify_pde_residual(s, grid, h) if len(grid[0]) else 0.0
    conservation = np.zeros(s.mixture.size)
    for t in times:
        conservation = np.maximum(conservation, verify_conservation(s, t, quad_tol))
    return VerifyReport(
        residual_max=residual,
        conservation=conservation.tolist(),
        generator_deviation=verify_generator_ode(s.mixture, horizon, ode_tol),
    )

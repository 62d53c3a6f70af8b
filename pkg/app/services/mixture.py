"""
Front map y_C(t) of a rate mixture, its inverse t_0(y), and the Lagrangian
particle map y_C(y, t) with its inverse for a piecewise-polynomial profile.
"""
import logging
import math

import numpy as np

from app.exceptions import DomainValidationError
from app.schemas.mixture import InitialProfile, RateMixture
from app.services.roots import newton_bisect

logger = logging.getLogger(__name__)

# Largest y accepted by the inverse maps; beyond it t_0(y) overflows.
Y_MAX = 1.0 - 1e-12

# Elements per exp() block when evaluating sums over large spectra.
_BLOCK = 1 << 22


def _exp_sum(t: np.ndarray, rates: np.ndarray, coeffs: np.ndarray, kernel=np.exp) -> np.ndarray:
    """sum_j coeffs_j * kernel(-rates_j * t) for every entry of a 1-d ``t``."""
    out = np.empty(t.shape)
    step = max(1, _BLOCK // rates.size)
    for start in range(0, t.size, step):
        block = np.multiply.outer(t[start:start + step], rates)
        out[start:start + step] = kernel(-block) @ coeffs
    return out


def _as_times(t) -> tuple[np.ndarray, bool]:
    arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise DomainValidationError(f"time must be finite and non-negative, got {t!r}")
    return np.atleast_1d(arr), arr.ndim == 0


def _check_position(y: float) -> float:
    y = float(y)
    if not 0.0 <= y < 1.0:
        raise DomainValidationError(f"position must lie in [0, 1), got {y!r}")
    if y > Y_MAX:
        raise DomainValidationError(f"position {y!r} too close to 1 to invert")
    return y


def front_position(m: RateMixture, t):
    """y_C(t) = 1 - sum_j rho_j exp(-f_j t); scalar in, scalar out."""
    times, scalar = _as_times(t)
    # sum_j rho_j (1 - e^{-f_j t}) keeps full relative precision near t = 0
    out = -_exp_sum(times, m.rates, m.weights, np.expm1)
    return float(out[0]) if scalar else out


def front_velocity(m: RateMixture, t):
    """dy_C/dt = sum_j f_j rho_j exp(-f_j t)."""
    times, scalar = _as_times(t)
    out = _exp_sum(times, m.rates, m.rates * m.weights)
    return float(out[0]) if scalar else out


def front_limit(m: RateMixture) -> float:
    """lim_{t->inf} y_C(t): one minus the mass that never evaporates."""
    return 1.0 - math.fsum(m.weights[m.rates == 0])


def front_inverse(m: RateMixture, y: float) -> float:
    """t_0(y), the time at which the front reaches ``y``."""
    y = _check_position(y)
    if y == 0.0:
        return 0.0
    if y >= front_limit(m):
        raise DomainValidationError(f"the front never reaches {y!r} (limit {front_limit(m)!r})")

    target_log = math.log1p(-y)

    def direct(t: float) -> tuple[float, float]:
        return front_position(m, t) - y, front_velocity(m, t)

    def complement(t: float) -> tuple[float, float]:
        # log-space residual keeps relative precision in 1 - y as y -> 1
        q = float(_exp_sum(np.array([t]), m.rates, m.weights)[0])
        return target_log - math.log(q), front_velocity(m, t) / q

    func = direct if y < 0.5 else complement
    hi = 1.0 / m.mean_rate
    for _ in range(2000):
        if func(hi)[0] >= 0:
            break
        hi *= 2.0
    else:
        raise DomainValidationError(f"could not bracket t_0({y!r})")
    return newton_bisect(func, 0.0, hi, x0=min(y / m.mean_rate, 0.5 * hi))


def lagrangian_map(p: InitialProfile, m: RateMixture, y, t: float):
    """Position at time ``t`` of the fluid particle that started at ``y``."""
    p.check_consistent(m)
    arr = np.asarray(y, dtype=float)
    if np.any(arr < 0) or np.any(arr >= 1):
        raise DomainValidationError(f"position must lie in [0, 1), got {y!r}")
    _as_times(t)
    return _lagrangian_map(p, m, arr, float(t))


def _lagrangian_map(p: InitialProfile, m: RateMixture, y, t: float):
    decay = np.exp(-m.rates * t)
    out = 1.0 - decay @ p.tail_mass(y)
    return float(out) if np.ndim(y) == 0 else out


def _lagrangian_slope(p: InitialProfile, m: RateMixture, y: float, t: float) -> float:
    return float(np.exp(-m.rates * t) @ p.values(y))


def lagrangian_inverse(p: InitialProfile, m: RateMixture, y: float, t: float) -> float:
    """Initial position of the particle found at ``y`` at time ``t`` (wave region)."""
    p.check_consistent(m)
    y = _check_position(y)
    _as_times(t)
    t = float(t)
    y_front = front_position(m, t)
    if y < y_front:
        raise DomainValidationError(
            f"y={y!r} lies behind the front y_C({t!r})={y_front!r}; use the stationary branch"
        )
    return _lagrangian_inverse(p, m, y, t, y_front)


def _lagrangian_inverse(p: InitialProfile, m: RateMixture, y: float, t: float, y_front: float) -> float:
    if t == 0.0:
        return y
    def func(z: float) -> tuple[float, float]:
        return _lagrangian_map(p, m, z, t) - y, _lagrangian_slope(p, m, z, t)

    # profile masses match rho only to PROFILE_TOL, so y_C(0, t) may sit a hair above y
    if y == y_front or func(0.0)[0] >= 0:
        return 0.0

    guess = (y - y_front) / (1.0 - y_front)
    return newton_bisect(func, 0.0, 1.0, x0=guess)

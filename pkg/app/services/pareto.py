"""
Pareto-rate ranking model.

With rates f_i = a (N / i)^(1/b) and equal fractions 1/N, the front of the
mixture has a closed form in the upper incomplete gamma function; the rank
of an item that jumped to the top at t = 0 is x_C(t) = 1 + N y_C(t).
"""
import logging
import math

import numpy as np
from scipy.special import exp1, gamma, gammaincc

from app.exceptions import DomainValidationError, UnsupportedExponentError
from app.schemas.mixture import RateMixture
from app.schemas.ranking import B_GAP, ParetoParams
from app.services.mixture import _as_times, front_position

logger = logging.getLogger(__name__)

# beyond this a*t every exp(-a*t) term is zero in double precision
X_SATURATE = 700.0


def _power_exp(k: float, p: np.ndarray) -> np.ndarray:
    """p^k e^(-p) without intermediate overflow."""
    return np.exp(k * np.log(p) - p)


def _upper_gamma(z: float, p: np.ndarray) -> np.ndarray:
    if p.size == 0:
        return np.empty(0)
    if z > 0:
        return gammaincc(z, p) * gamma(z)
    if z == math.floor(z):
        s, value = 0.0, exp1(p)
    else:
        s = z + math.ceil(-z)
        value = gammaincc(s, p) * gamma(s)
    # Gamma(k, p) = (Gamma(k + 1, p) - p^k e^-p) / k, stepping down to z
    for _ in range(round(s - z)):
        s -= 1.0
        value = (value - _power_exp(s, p)) / s
    return value


def upper_incomplete_gamma(z: float, p):
    """Gamma(z, p) = int_p^inf e^(-w) w^(z-1) dw for z in (-2, 2) and p > 0."""
    z = float(z)
    if not -2.0 < z < 2.0:
        raise DomainValidationError(f"order z={z!r} outside the supported range (-2, 2)")
    arr = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainValidationError(f"argument must be finite and positive, got {p!r}")
    out = _upper_gamma(z, np.atleast_1d(arr))
    return float(out[0]) if arr.ndim == 0 else out


def check_exponent(b: float) -> None:
    if abs(b - 1.0) <= B_GAP or abs(b - 2.0) <= B_GAP:
        raise UnsupportedExponentError(f"b={b!r} is too close to 1 or 2, where the closed form is singular")
    if b > 2.0:
        raise UnsupportedExponentError(f"b={b!r}: exponents b >= 2 are not supported")


def _relative_front(b: float, x: np.ndarray) -> np.ndarray:
    y = np.zeros_like(x)
    y[x > X_SATURATE] = 1.0
    live = (x > 0) & (x <= X_SATURATE)
    xs = x[live]
    if b < 1:
        y[live] = -np.expm1(-xs) + xs ** b * _upper_gamma(1.0 - b, xs)
    else:
        y[live] = (
                -np.expm1(-xs)
                + xs * np.exp(-xs) / (b - 1.0)
                - xs ** b * _upper_gamma(2.0 - b, xs) / (b - 1.0)
        )
    return y


def relative_front_pareto(params: ParetoParams, t):
    """
    Continuum front y_C(t) for Pareto rates.

    0 < b < 1: 1 - e^(-at) + (at)^b Gamma(1-b, at)
    1 < b < 2: 1 - e^(-at) (1 - at/(b-1)) - (at)^b Gamma(2-b, at) / (b-1)
    """
    check_exponent(params.b)
    times, scalar = _as_times(t)
    y = _relative_front(params.b, params.a * times)
    return float(y[0]) if scalar else y


def relative_front_pareto_direct(params: ParetoParams, t):
    """1 - b (at)^b Gamma(-b, at), the form before partial integration."""
    check_exponent(params.b)
    times, scalar = _as_times(t)
    x = params.a * times
    b = params.b
    y = np.zeros_like(x)
    y[x > X_SATURATE] = 1.0
    live = (x > 0) & (x <= X_SATURATE)
    y[live] = 1.0 - b * x[live] ** b * _upper_gamma(-b, x[live])
    return float(y[0]) if scalar else y


def rank_trajectory(params: ParetoParams, t):
    """x_C(t) = 1 + N y_C(t): rank at time t of an item that jumped to the top at t = 0."""
    y = relative_front_pareto(params, t)
    return 1.0 + params.N * y


def _front_slope(b: float, x: np.ndarray) -> np.ndarray:
    # dy/dx = b x^(b-1) Gamma(1-b, x) on both branches
    slope = np.zeros_like(x)
    live = (x > 0) & (x <= X_SATURATE)
    xs = x[live]
    slope[live] = b * xs ** (b - 1.0) * _upper_gamma(1.0 - b, xs)
    at_zero = x == 0
    slope[at_zero] = math.inf if b < 1 else b / (b - 1.0)
    return slope


def front_rate_derivative(params: ParetoParams, t):
    """dy_C/dt = a b (at)^(b-1) Gamma(1-b, at); infinite at t = 0 when b < 1."""
    check_exponent(params.b)
    times, scalar = _as_times(t)
    rate = params.a * _front_slope(params.b, params.a * times)
    return float(rate[0]) if scalar else rate


def _order_derivative(s: float, x: np.ndarray) -> np.ndarray:
    h = min(1e-5, s / 4)
    return (_upper_gamma(s + h, x) - _upper_gamma(s - h, x)) / (2 * h)


def front_sensitivities(a: float, b: float, t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    y_C and its partial derivatives in a, b and t at every entry of ``t``.
    The derivative in the order of Gamma is taken by central differences.
    """
    x = a * t
    y = _relative_front(b, x)
    live = (x > 0) & (x <= X_SATURATE)
    xs = x[live]
    slope = np.zeros_like(x)
    slope[live] = _front_slope(b, xs)

    d_b = np.zeros_like(x)
    power = xs ** b
    log_x = np.log(xs) if xs.size else xs
    if b < 1:
        s = 1.0 - b
        d_b[live] = power * log_x * _upper_gamma(s, xs) - power * _order_derivative(s, xs)
    else:
        s, k = 2.0 - b, b - 1.0
        g = _upper_gamma(s, xs)
        d_b[live] = (
                -xs * np.exp(-xs) / k ** 2
                - power * log_x * g / k
                + power * g / k ** 2
                + power * _order_derivative(s, xs) / k
        )
    # the jump instant itself and the saturated tail carry no slope
    return y, t * slope, d_b, a * slope


def short_time_coefficient(params: ParetoParams) -> float:
    """c = N a^b Gamma(1-b), so that x_C(t) ~ 1 + c t^b for small t."""
    if not params.b < 1:
        raise DomainValidationError(f"short-time coefficient needs 0 < b < 1, got b={params.b!r}")
    return params.N * params.a ** params.b * float(gamma(1.0 - params.b))


def short_time_expansion(params: ParetoParams, t):
    """
    Leading small-t terms of y_C(t):
    a^b Gamma(1-b) t^b for 0 < b < 1, and
    ab/(b-1) t - Gamma(2-b) a^b/(b-1) t^b for 1 < b < 2.
    """
    check_exponent(params.b)
    times, scalar = _as_times(t)
    a, b = params.a, params.b
    if b < 1:
        y = a ** b * float(gamma(1.0 - b)) * times ** b
    else:
        y = a * b / (b - 1.0) * times - float(gamma(2.0 - b)) * a ** b / (b - 1.0) * times ** b
    return float(y[0]) if scalar else y


def pareto_rates(params: ParetoParams) -> RateMixture:
    """f_i = a (N/i)^(1/b) with rho_i = 1/N, i = 1..N, fastest item first."""
    if params.N < 2 or params.N != math.floor(params.N):
        raise DomainValidationError(f"N must be an integer >= 2, got {params.N!r}")
    n = int(params.N)
    ranks = np.arange(1, n + 1, dtype=float)
    rates = params.a * (n / ranks) ** (1.0 / params.b)
    return RateMixture.from_arrays(rates, np.full(n, 1.0 / n))


def discrete_front_gap(params: ParetoParams, t) -> float:
    """max_t |N y_C(t) - N y_C^sum(t)|: rank error of the continuum formula."""
    continuum = np.atleast_1d(relative_front_pareto(params, t))
    discrete = np.atleast_1d(front_position(pareto_rates(params), t))
    gap = float(params.N * np.max(np.abs(continuum - discrete)))
    logger.info(f"discrete/continuum gap for N={params.N!r}: {gap:.3g} ranks")
    return gap

import logging
import math
from typing import Callable

from app.config import settings
from app.exceptions import ConvergenceError, DomainValidationError

logger = logging.getLogger(__name__)


def newton_bisect(
        func: Callable[[float], tuple[float, float]],
        lo: float,
        hi: float,
        x0: float | None = None,
        tol: float | None = None,
        max_iter: int | None = None,
) -> float:
    """
    Root of an increasing function bracketed by ``[lo, hi]``.

    ``func(x)`` returns the value and its derivative. A Newton step is taken
    whenever it lands strictly inside the current bracket, otherwise the
    bracket is bisected. Iteration stops once ``|func(x)| <= tol``; one more
    Newton step is then taken to bring the residual to rounding level.
    """
    tol = settings.ROOT_TOL if tol is None else tol
    max_iter = settings.ROOT_MAX_ITER if max_iter is None else max_iter

    f_lo, _ = func(lo)
    f_hi, _ = func(hi)
    if f_lo > 0 or f_hi < 0:
        raise DomainValidationError(f"root not bracketed: f({lo!r})={f_lo!r}, f({hi!r})={f_hi!r}")
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi

    x = x0 if x0 is not None and lo < x0 < hi else 0.5 * (lo + hi)
    for iteration in range(max_iter):
        f, df = func(x)
        if f == 0:
            return x
        if f < 0:
            lo = x
        else:
            hi = x

        if abs(f) <= tol:
            if df > 0:
                polished = x - f / df
                if lo <= polished <= hi:
                    return polished
            return x

        candidate = x - f / df if df > 0 else math.nan
        if not lo < candidate < hi:
            candidate = 0.5 * (lo + hi)
        if candidate == x or hi - lo <= 4 * math.ulp(max(abs(lo), abs(hi), 1e-300)):
            # bracket collapsed onto adjacent floats
            return x
        x = candidate

    logger.debug(f"newton_bisect stalled at x={x!r}, bracket=({lo!r}, {hi!r})")
    raise ConvergenceError(f"root finder did not converge in {max_iter} iterations")

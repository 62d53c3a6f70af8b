import math
from functools import cached_property
from typing import Self

import numpy as np
from numpy.polynomial import polynomial as P
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.config import settings
from app.exceptions import DomainValidationError

MAX_DEGREE = 3


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


class Component(BaseModel):
    """One species of the fluid: evaporation rate ``f`` and mass fraction ``rho``."""
    model_config = ConfigDict(frozen=True)

    f: float = Field(ge=0, allow_inf_nan=False)
    rho: float = Field(gt=0, allow_inf_nan=False)


class RateMixture(BaseModel):
    """Finite spectrum of evaporation rates with their mass fractions.

    Zero rates are allowed (a non-evaporating solute), but at least one
    component must evaporate.
    """
    model_config = ConfigDict(frozen=True)

    components: tuple[Component, ...] = Field(min_length=1)

    @model_validator(mode="after")
    def _check_spectrum(self) -> Self:
        total = math.fsum(c.rho for c in self.components)
        if abs(total - 1.0) > settings.MIXTURE_TOL:
            raise ValueError(f"mass fractions sum to {total!r}, expected 1")
        if all(c.f == 0 for c in self.components):
            raise ValueError("at least one component must have a positive rate")
        return self

    @classmethod
    def from_arrays(cls, rates, weights) -> "RateMixture":
        """Vectorized constructor for large spectra (e.g. Pareto rates with N ~ 1e6)."""
        f = np.asarray(rates, dtype=float)
        rho = np.asarray(weights, dtype=float)
        if f.ndim != 1 or f.shape != rho.shape or f.size == 0:
            raise DomainValidationError("rates and weights must be non-empty 1-d arrays of equal length")
        if not (np.all(np.isfinite(f)) and np.all(f >= 0)):
            raise DomainValidationError("rates must be finite and non-negative")
        if not (np.all(np.isfinite(rho)) and np.all(rho > 0)):
            raise DomainValidationError("mass fractions must be finite and positive")
        total = math.fsum(rho)
        if abs(total - 1.0) > settings.MIXTURE_TOL:
            raise DomainValidationError(f"mass fractions sum to {total!r}, expected 1")
        if not np.any(f > 0):
            raise DomainValidationError("at least one component must have a positive rate")
        components = tuple(
            Component.model_construct(f=float(fi), rho=float(ri)) for fi, ri in zip(f, rho)
        )
        return cls.model_construct(components=components)

    @classmethod
    def normalized(cls, rates, weights) -> "RateMixture":
        """Builds a mixture after rescaling ``weights`` to sum to one."""
        rho = np.asarray(weights, dtype=float)
        return cls.from_arrays(rates, rho / math.fsum(rho))

    @property
    def size(self) -> int:
        return len(self.components)

    @cached_property
    def rates(self) -> np.ndarray:
        return _frozen(np.fromiter((c.f for c in self.components), dtype=float, count=self.size))

    @cached_property
    def weights(self) -> np.ndarray:
        return _frozen(np.fromiter((c.rho for c in self.components), dtype=float, count=self.size))

    @cached_property
    def mean_rate(self) -> float:
        return float(np.dot(self.rates, self.weights))


class InitialProfile(BaseModel):
    """Piecewise-polynomial initial densities u_i(y, 0) on [0, 1).

    ``cells[k][i]`` holds the ascending coefficients (at most four) of
    component ``i`` on ``[breakpoints[k], breakpoints[k+1])`` in the local
    variable ``s = y - breakpoints[k]``. The profile is right-continuous at
    breakpoints.
    """
    model_config = ConfigDict(frozen=True)

    breakpoints: tuple[float, ...] = Field(min_length=2)
    cells: tuple[tuple[tuple[float, ...], ...], ...] = Field(min_length=1)

    @model_validator(mode="after")
    def _check_profile(self) -> Self:
        bp = np.asarray(self.breakpoints, dtype=float)
        if bp[0] != 0.0 or bp[-1] != 1.0:
            raise ValueError("breakpoints must start at 0 and end at 1")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if len(self.cells) != len(bp) - 1:
            raise ValueError(f"expected {len(bp) - 1} cells, got {len(self.cells)}")
        n = len(self.cells[0])
        if n == 0 or any(len(cell) != n for cell in self.cells):
            raise ValueError("every cell must list the same, non-zero number of components")
        for cell in self.cells:
            for coef in cell:
                if not 1 <= len(coef) <= MAX_DEGREE + 1:
                    raise ValueError(f"polynomial degree must be at most {MAX_DEGREE}")
                if not all(math.isfinite(c) for c in coef):
                    raise ValueError("coefficients must be finite")

        coefs = self.coefficients
        widths = np.diff(bp)
        total = coefs.sum(axis=1)
        total[:, 0] -= 1.0
        # sup over a cell of |sum_i u_i - 1| is bounded by sum_m |d_m| w^m
        powers = widths[:, None] ** np.arange(MAX_DEGREE + 1)
        deviation = float(np.max(np.sum(np.abs(total) * powers, axis=1)))
        if deviation > settings.PROFILE_TOL:
            raise ValueError(f"densities do not sum to 1 (deviation {deviation:.3g})")

        for k, width in enumerate(widths):
            for i in range(n):
                low = _cell_minimum(coefs[k, i], width)
                if low < -settings.PROFILE_TOL:
                    raise ValueError(f"component {i} is negative on cell {k} (min {low:.3g})")
        return self

    @classmethod
    def uniform(cls, mixture: RateMixture) -> "InitialProfile":
        """Constant densities u_i(y, 0) = rho_i."""
        return cls(breakpoints=(0.0, 1.0), cells=(tuple((c.rho,) for c in mixture.components),))

    @property
    def n_components(self) -> int:
        return len(self.cells[0])

    @cached_property
    def edges(self) -> np.ndarray:
        return _frozen(np.asarray(self.breakpoints, dtype=float))

    @cached_property
    def coefficients(self) -> np.ndarray:
        """Array of shape (cells, components, 4)."""
        coefs = np.zeros((len(self.cells), len(self.cells[0]), MAX_DEGREE + 1))
        for k, cell in enumerate(self.cells):
            for i, coef in enumerate(cell):
                coefs[k, i, : len(coef)] = coef
        return _frozen(coefs)

    @cached_property
    def _antiderivatives(self) -> np.ndarray:
        return _frozen(P.polyint(self.coefficients, axis=-1))

    @cached_property
    def _cell_masses(self) -> np.ndarray:
        widths = np.diff(self.edges)
        anti = np.moveaxis(self._antiderivatives, -1, 0)
        return _frozen(P.polyval(widths[:, None], anti, tensor=False))

    @cached_property
    def _mass_after(self) -> np.ndarray:
        # _mass_after[k] = mass of cells strictly to the right of cell k
        masses = self._cell_masses
        right = np.cumsum(masses[::-1], axis=0)[::-1]
        return _frozen(np.vstack([right[1:], np.zeros((1, masses.shape[1]))]))

    def _locate(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        k = np.clip(np.searchsorted(self.edges, y, side="right") - 1, 0, len(self.cells) - 1)
        return k, y - self.edges[k]

    def values(self, y):
        """u_i(y, 0); shape (n,) for scalar y, (n, len(y)) otherwise."""
        arr = np.asarray(y, dtype=float)
        k, s = self._locate(np.atleast_1d(arr))
        coefs = np.moveaxis(self.coefficients[k], -1, 0)  # (4, P, n)
        out = P.polyval(s[:, None], coefs, tensor=False).T
        return out[:, 0] if arr.ndim == 0 else out

    def tail_mass(self, y):
        """Exact integrals int_y^1 u_i(z, 0) dz; same shape convention as ``values``."""
        arr = np.asarray(y, dtype=float)
        k, s = self._locate(np.atleast_1d(arr))
        anti = np.moveaxis(self._antiderivatives[k], -1, 0)  # (5, P, n)
        partial = P.polyval(s[:, None], anti, tensor=False)
        out = (self._mass_after[k] + self._cell_masses[k] - partial).T
        return out[:, 0] if arr.ndim == 0 else out

    def masses(self) -> np.ndarray:
        return self.tail_mass(np.zeros(1))[:, 0]

    def check_consistent(self, mixture: RateMixture) -> None:
        if self.n_components != mixture.size:
            raise DomainValidationError(
                f"profile has {self.n_components} components, mixture has {mixture.size}"
            )
        gap = float(np.max(np.abs(self.masses() - mixture.weights)))
        if gap > settings.PROFILE_TOL:
            raise DomainValidationError(f"profile masses differ from mixture fractions by {gap:.3g}")


def _cell_minimum(coef: np.ndarray, width: float) -> float:
    candidates = [0.0, width]
    deriv = P.polyder(P.polytrim(coef))
    if deriv.size > 1:
        for root in P.polyroots(deriv):
            if abs(root.imag) < 1e-14 and 0.0 < root.real < width:
                candidates.append(root.real)
    return float(np.min(P.polyval(np.asarray(candidates), coef)))

import math
from enum import StrEnum
from typing import Self

from pydantic import BaseModel, ConfigDict, Field, model_validator

B_GAP = 1e-9


class ParetoParams(BaseModel):
    """Pareto rate law f_i = a (N / i)^(1/b).

    ``N`` may be real when it is a fit parameter; ``pareto_rates`` insists on
    an integer population.
    """
    model_config = ConfigDict(frozen=True)

    N: float = Field(ge=1, allow_inf_nan=False)
    a: float = Field(gt=0, allow_inf_nan=False)
    b: float = Field(gt=0, allow_inf_nan=False)


class Trajectory(BaseModel):
    """Observed ranks of one item, optionally with the time it jumped to rank 1."""
    model_config = ConfigDict(frozen=True)

    label: str = ""
    times: tuple[float, ...] = Field(min_length=1)
    ranks: tuple[float, ...] = Field(min_length=1)
    jump_t: float | None = None
    offset_unknown: bool = False

    @model_validator(mode="after")
    def _check_observations(self) -> Self:
        if len(self.times) != len(self.ranks):
            raise ValueError(f"{len(self.times)} times but {len(self.ranks)} ranks")
        if not all(math.isfinite(t) for t in self.times):
            raise ValueError("observation times must be finite")
        if any(later <= earlier for earlier, later in zip(self.times, self.times[1:])):
            raise ValueError(f"trajectory {self.label!r}: times must be strictly increasing")
        for t, rank in zip(self.times, self.ranks):
            if not (math.isfinite(rank) and rank >= 1):
                raise ValueError(f"trajectory {self.label!r}: rank {rank!r} at t={t!r} is below 1")
        if self.jump_t is not None and not math.isfinite(self.jump_t):
            raise ValueError("jump time must be finite")
        return self

    @property
    def size(self) -> int:
        return len(self.times)


class AlignedTrajectory(BaseModel):
    """A trajectory on the time axis of its own jump; ``offset_unknown`` marks a pending tau."""
    model_config = ConfigDict(frozen=True)

    label: str
    times: tuple[float, ...]
    ranks: tuple[float, ...]
    raw_times: tuple[float, ...]
    offset_unknown: bool


class FitModel(StrEnum):
    fixed_n = "fixed-N"
    free_n = "free-N"


class FitProblem(BaseModel):
    model_config = ConfigDict(frozen=True)

    trajectories: tuple[Trajectory, ...] = Field(min_length=1)
    model: FitModel = FitModel.fixed_n
    N: float | None = Field(default=None, ge=2)
    a_guess: float = Field(default=1e-3, gt=0)
    b_guess: float = Field(default=0.5, gt=0)
    N_guess: float | None = None
    a_bounds: tuple[float, float] = (0.0, math.inf)
    b_bounds: tuple[float, float] = (1e-6, 1.0 - B_GAP)
    N_bounds: tuple[float, float] | None = None
    weights: tuple[tuple[float, ...], ...] | None = None
    exclude: tuple[tuple[float, float], ...] = ()
    multi_start: bool = True

    @model_validator(mode="after")
    def _check_problem(self) -> Self:
        for traj in self.trajectories:
            if traj.size < 2:
                raise ValueError(f"trajectory {traj.label!r} has fewer than 2 observations")
        top = self.max_rank
        if self.model is FitModel.fixed_n:
            if self.N is None:
                raise ValueError("fixed-N model needs N")
            if self.N < top:
                raise ValueError(f"N={self.N!r} is below the largest observed rank {top!r}")
        elif self.N is not None:
            raise ValueError("free-N model takes N_guess, not N")

        a_lo, a_hi = self.a_bounds
        if not 0 <= a_lo < a_hi:
            raise ValueError(f"bad bounds for a: {self.a_bounds!r}")
        b_lo, b_hi = self.b_bounds
        if not b_lo < b_hi:
            raise ValueError(f"bad bounds for b: {self.b_bounds!r}")
        lower_band = 0 < b_lo and b_hi <= 1 - B_GAP
        upper_band = 1 + B_GAP <= b_lo and b_hi <= 2 - B_GAP
        if not (lower_band or upper_band):
            raise ValueError(f"b bounds {self.b_bounds!r} must lie inside (0, 1) or (1, 2)")
        if not b_lo < self.b_guess < b_hi:
            raise ValueError(f"b guess {self.b_guess!r} outside {self.b_bounds!r}")
        if not a_lo < self.a_guess < a_hi:
            raise ValueError(f"a guess {self.a_guess!r} outside {self.a_bounds!r}")
        if self.model is FitModel.free_n and self.N_bounds is not None:
            n_lo, n_hi = self.N_bounds
            if not top <= n_lo < n_hi:
                raise ValueError(f"N bounds {self.N_bounds!r} must start at or above rank {top!r}")

        if self.weights is not None:
            if len(self.weights) != len(self.trajectories):
                raise ValueError("weights must list one sequence per trajectory")
            for traj, w in zip(self.trajectories, self.weights):
                if len(w) != traj.size or any(not (math.isfinite(x) and x >= 0) for x in w):
                    raise ValueError(f"weights for {traj.label!r} must be {traj.size} non-negative numbers")
        for lo, hi in self.exclude:
            if not lo <= hi:
                raise ValueError(f"exclusion interval ({lo!r}, {hi!r}) is reversed")
        return self

    @property
    def max_rank(self) -> float:
        return max(max(traj.ranks) for traj in self.trajectories)


class FitResult(BaseModel):
    a: float
    b: float
    N: float
    offsets: list[float]
    chi2: float
    n_d: int
    rms: float
    converged: bool
    iterations: int
    n_params: int
    gradient_norm: float
    residuals: list[float]

    def report(self) -> dict:
        """The JSON document written by ``rankflow fit``; key order is fixed."""
        return self.model_dump(
            include={"a", "b", "N", "offsets", "chi2", "n_d", "rms", "converged", "iterations"}
        )


class Excursion(BaseModel):
    """Ranks of a tracked particle between two of its jumps, on a re-zeroed clock."""
    model_config = ConfigDict(frozen=True)

    start: float
    from_jump: bool
    times: tuple[float, ...]
    ranks: tuple[int, ...]


class TrackedTrajectory(BaseModel):
    model_config = ConfigDict(frozen=True)

    particle: int
    n: int
    excursions: tuple[Excursion, ...]

    @property
    def observations(self) -> list[tuple[float, int]]:
        return [(t, r) for exc in self.excursions for t, r in zip(exc.times, exc.ranks)]

    def first_jump(self) -> Excursion | None:
        return next((exc for exc in self.excursions if exc.from_jump), None)


class EmpiricalFront(BaseModel):
    times: list[float]
    mean: list[float]
    stderr: list[float]
    count: list[int]
    replicas: int

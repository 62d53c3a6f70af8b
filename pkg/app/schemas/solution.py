from enum import StrEnum
from typing import Self

from pydantic import BaseModel, ConfigDict, model_validator

from app.schemas.mixture import InitialProfile, RateMixture


class Branch(StrEnum):
    stationary = "stationary"
    wave = "wave"
    front = "front"


class SolutionField(BaseModel):
    """A mixture together with an initial profile that reproduces its mass fractions."""
    model_config = ConfigDict(frozen=True)

    mixture: RateMixture
    profile: InitialProfile

    @model_validator(mode="after")
    def _check_pair(self) -> Self:
        self.profile.check_consistent(self.mixture)
        return self

    @classmethod
    def uniform(cls, mixture: RateMixture) -> "SolutionField":
        return cls(mixture=mixture, profile=InitialProfile.uniform(mixture))


class StateSample(BaseModel):
    model_config = ConfigDict(frozen=True)

    y: float
    t: float
    u: tuple[float, ...]
    v: float
    branch: Branch


class VerifyReport(BaseModel):
    residual_max: float
    conservation: list[float]
    generator_deviation: float


class ResidualConvergence(BaseModel):
    steps: list[float]
    residuals: list[float]
    ratios: list[float]

from typing import Any, Optional, Self

from pydantic import BaseModel, Field, model_validator

from app.config import settings
from app.schemas.mixture import InitialProfile, RateMixture
from app.schemas.ranking import B_GAP, FitModel, FitProblem, ParetoParams, Trajectory


class FrontRequest(BaseModel):
    times: list[float] = Field(min_length=1)
    pareto: Optional[ParetoParams] = None
    mixture: Optional[RateMixture] = None

    @model_validator(mode="after")
    def _one_source(self) -> Self:
        if (self.pareto is None) == (self.mixture is None):
            raise ValueError("give either pareto parameters or a mixture")
        return self


class FrontResponse(BaseModel):
    column: str  # x_C for Pareto parameters, y_C for a mixture
    times: list[float]
    values: list[float]


class FieldRequest(BaseModel):
    mixture: RateMixture
    profile: Optional[InitialProfile] = None


class EvaluateRequest(FieldRequest):
    points: list[tuple[float, float]] = Field(min_length=1)  # (y, t)


class VerifyRequest(FieldRequest):
    ys: list[float]
    ts: list[float]
    h: float = Field(default=1e-4, gt=0)
    times: list[float] = [0.1, 1.0, 10.0]
    quad_tol: float = Field(default=1e-10, gt=0)
    horizon: float = Field(default=10.0, gt=0)
    ode_tol: float = Field(default=1e-10, gt=0)
    drop_inadmissible: bool = True


class FitRequest(BaseModel):
    trajectories: list[Trajectory] = Field(min_length=1)
    fix_N: Optional[float] = None
    N_guess: Optional[float] = None
    a_guess: float = 1e-3
    b_guess: float = 0.5
    b_min: float = 1e-6
    b_max: float = 1.0 - B_GAP
    exclude: list[tuple[float, float]] = []
    multi_start: bool = True

    def problem(self) -> FitProblem:
        return FitProblem(
            trajectories=tuple(self.trajectories),
            model=FitModel.fixed_n if self.fix_N is not None else FitModel.free_n,
            N=self.fix_N,
            N_guess=self.N_guess,
            a_guess=self.a_guess,
            b_guess=self.b_guess,
            b_bounds=(self.b_min, self.b_max),
            exclude=tuple(self.exclude),
            multi_start=self.multi_start,
        )


class EnsembleRequest(BaseModel):
    pareto: ParetoParams
    horizon: float = Field(gt=0)
    interval: float = Field(gt=0)
    particle: Optional[int] = None  # slowest particle when omitted
    replicas: int = Field(default=20, ge=1)
    seed: int = Field(default=settings.DEFAULT_SEED, ge=0, lt=2 ** 64)


class TaskAcceptedResponse(BaseModel):
    status: str
    message: str
    task_id: str


class TaskStatusResponse(BaseModel):
    task_id: str
    task_status: str  # PENDING, STARTED, SUCCESS, FAILURE
    result: Optional[dict[str, Any]] = None
    error: Optional[str] = None

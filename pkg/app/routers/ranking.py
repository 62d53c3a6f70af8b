import logging

from celery.result import AsyncResult
from fastapi import APIRouter, Path

from app.celery_app import celery_app
from app.schemas.api import (
    EnsembleRequest,
    EvaluateRequest,
    FieldRequest,
    FitRequest,
    FrontRequest,
    FrontResponse,
    TaskAcceptedResponse,
    TaskStatusResponse,
    VerifyRequest,
)
from app.schemas.solution import SolutionField, StateSample, VerifyReport
from app.services import pareto, solution
from app.services.fit import time_shift_align
from app.services.mixture import front_position
from app.tasks import fit_task, simulate_ensemble_task

logger = logging.getLogger(__name__)

router = APIRouter(prefix='/ranking', tags=['ranking'])


def _field(request: FieldRequest) -> SolutionField:
    if request.profile is None:
        return SolutionField.uniform(request.mixture)
    return SolutionField(mixture=request.mixture, profile=request.profile)


@router.post('/front', status_code=200, summary='Front position or rank trajectory', response_model=FrontResponse)
def front(request: FrontRequest):
    if request.pareto is not None:
        values = pareto.rank_trajectory(request.pareto, request.times)
        return FrontResponse(column="x_C", times=request.times, values=values.tolist())
    values = front_position(request.mixture, request.times)
    return FrontResponse(column="y_C", times=request.times, values=values.tolist())


@router.post('/evaluate', status_code=200, summary='Densities and velocity at points', response_model=list[StateSample])
def evaluate(request: EvaluateRequest):
    field = _field(request)
    return [solution.sample_state(field, y, t) for y, t in request.points]


@router.post('/verify', status_code=200, summary='Numerical checks of a solution field', response_model=VerifyReport)
def verify(request: VerifyRequest):
    field = _field(request)
    grid = (request.ys, request.ts)
    if request.drop_inadmissible:
        grid = solution.admissible_grid(field, grid, request.h)
    return solution.verify(
        field, grid, h=request.h, times=request.times,
        quad_tol=request.quad_tol, horizon=request.horizon, ode_tol=request.ode_tol,
    )


@router.post('/fit', status_code=202, summary='Start a ranking-curve fit', response_model=TaskAcceptedResponse)
def start_fit(request: FitRequest):
    # reject a malformed problem before queueing it
    time_shift_align(request.problem().trajectories)
    task = fit_task.delay(request.model_dump(mode="json"))
    logger.info(f"queued fit task {task.id} for {len(request.trajectories)} trajectories")
    return TaskAcceptedResponse(
        status="accepted",
        message=f"Fit started for {len(request.trajectories)} trajectories",
        task_id=task.id,
    )


@router.post('/simulate', status_code=202, summary='Start a simulation ensemble', response_model=TaskAcceptedResponse)
def start_simulation(request: EnsembleRequest):
    pareto.pareto_rates(request.pareto)
    task = simulate_ensemble_task.delay(request.model_dump(mode="json"))
    logger.info(f"queued ensemble task {task.id} with {request.replicas} replicas")
    return TaskAcceptedResponse(
        status="accepted",
        message=f"Ensemble of {request.replicas} replicas started",
        task_id=task.id,
    )


@router.get('/status/{task_id}', status_code=200, summary='Get task status', response_model=TaskStatusResponse)
def get_task_status(task_id: str = Path(..., description="Task ID returned by fit or simulate")):
    """
    Status of a background task:
    - task_status: PENDING, STARTED, PROGRESS, SUCCESS or FAILURE
    - result: the fit result or empirical front once the task succeeded
    - error: the failure message otherwise
    """
    task_result = AsyncResult(task_id, app=celery_app)
    response = TaskStatusResponse(task_id=task_id, task_status=task_result.status)
    if task_result.successful():
        response.result = task_result.result
    elif task_result.failed():
        response.error = str(task_result.result)
    return response

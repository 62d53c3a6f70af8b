import logging

from app.celery_app import celery_app
from app.exceptions import RankflowError
from app.schemas.api import EnsembleRequest, FitRequest
from app.services import pareto, simulate
from app.services.fit import fit

logger = logging.getLogger(__name__)


@celery_app.task(bind=True)
def fit_task(self, payload: dict) -> dict:
    """Runs a least-squares fit; ``payload`` is a serialized FitRequest."""
    request = FitRequest.model_validate(payload)
    self.update_state(state="PROGRESS", meta={"stage": "fitting", "trajectories": len(request.trajectories)})
    try:
        result = fit(request.problem())
    except RankflowError as e:
        logger.error(f"fit task {self.request.id} failed: {e}")
        raise
    return result.model_dump()


@celery_app.task(bind=True)
def simulate_ensemble_task(self, payload: dict) -> dict:
    """
    Replicated move-to-front runs for Pareto rates: the tracked particle
    starts at rank 1 and its relative rank is averaged over the replicas.
    The continuum front at the same times is returned alongside.
    """
    request = EnsembleRequest.model_validate(payload)
    rates = pareto.pareto_rates(request.pareto).rates
    particle = rates.size - 1 if request.particle is None else request.particle
    self.update_state(state="PROGRESS", meta={"stage": "simulating", "replicas": request.replicas})
    try:
        histories = simulate.simulate_ensemble(
            rates, request.horizon, request.seed, request.interval, particle, request.replicas,
        )
        front = simulate.empirical_front(histories, request.replicas)
    except RankflowError as e:
        logger.error(f"ensemble task {self.request.id} failed: {e}")
        raise
    result = front.model_dump()
    result["particle"] = particle
    result["continuum"] = pareto.relative_front_pareto(request.pareto, front.times).tolist() if front.times else []
    return result

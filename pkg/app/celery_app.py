from celery import Celery
from app.config import settings

celery_app = Celery(
    "rankflow_service",
    broker=settings.CELERY_BROKER_URL,
    backend=settings.CELERY_RESULT_BACKEND,
    broker_connection_retry_on_startup=True,
    include=["app.tasks"]
)

# one long task per worker process at a time
celery_app.conf.update(
    task_serializer='json',
    accept_content=["json"],
    result_serializer="json",
    task_track_started=True,
    task_soft_time_limit=settings.TASK_SOFT_TIME_LIMIT,
    task_time_limit=settings.TASK_SOFT_TIME_LIMIT + 60,
    worker_prefetch_multiplier=1,
    task_always_eager=settings.CELERY_TASK_ALWAYS_EAGER,
    task_store_eager_result=True,
)

celery_app.conf.task_routes = {
    "app.tasks.simulate_ensemble_task": {"queue": 'simulation'},
    "app.tasks.fit_task": {"queue": 'default'},
}

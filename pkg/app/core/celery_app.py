from celery import Celery
from app.core.config import settings

# Create Celery instance
celery_app = Celery(
    "rs_hwi_lab",
    broker=settings.celery_broker_url,
    backend=settings.celery_result_backend,
    include=["app.tasks.campaign"]
)

# Configure Celery
celery_app.conf.update(
    task_serializer="json",
    accept_content=["json"],
    result_serializer="json",
    timezone="UTC",
    enable_utc=True,
    task_track_started=True,
    task_time_limit=6 * 60 * 60,  # a full Monte Carlo grid point can take a while
    task_soft_time_limit=5 * 60 * 60,
    worker_prefetch_multiplier=1,
    worker_max_tasks_per_child=50,
    task_acks_late=True,
    task_reject_on_worker_lost=True,
)

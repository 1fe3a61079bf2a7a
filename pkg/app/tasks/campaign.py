import logging
from typing import Any, Dict

from app.core.celery_app import celery_app
from app.core.exceptions import LabError
from app.services.campaign import CampaignService

# Set up logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


@celery_app.task(bind=True, max_retries=3)
def run_grid_point(self, payload: Dict[str, Any]):
    """Evaluate one grid point of a campaign in a worker."""
    index = payload.get("index")
    try:
        logger.info(f"Running grid point {index}")
        rows = CampaignService.execute_grid_point(payload)
        failed = sum(1 for row in rows if row["status"] != "ok")
        if failed:
            logger.error(f"❌ Grid point {index}: {failed} rows failed")
        else:
            logger.info(f"✅ Grid point {index}: {len(rows)} rows")
        return {"status": "completed", "index": index, "rows": rows}

    except LabError:
        # configuration and engine errors are already recorded per row
        raise

    except Exception as e:
        logger.error(f"Grid point {index} crashed: {str(e)}")
        if self.request.retries < self.max_retries:
            logger.info(f"Retrying grid point {index}, attempt {self.request.retries + 1}")
            raise self.retry(countdown=10 * (2 ** self.request.retries))
        return {"status": "failed", "index": index, "rows": [], "error": str(e)}

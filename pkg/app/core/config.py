from pydantic_settings import BaseSettings
import os
from dotenv import load_dotenv

load_dotenv()

class Settings(BaseSettings):
    # Output
    results_dir: str = os.getenv("RSLAB_RESULTS_DIR", "results")

    # Deterministic-equivalent solver
    fixed_point_tol: float = 1e-10
    fixed_point_max_iter: int = 500
    consistency_tol: float = 1e-10
    split_search_points: int = 200

    # Celery Configuration (only used with --backend celery)
    celery_broker_url: str = os.getenv("CELERY_BROKER_URL", "redis://localhost:6379/0")
    celery_result_backend: str = os.getenv("CELERY_RESULT_BACKEND", "redis://localhost:6379/0")

    def get_results_dir(self, override: str = None) -> str:
        """Get the output directory, CLI override first."""
        if override:
            return override
        return self.results_dir

    class Config:
        env_file = ".env"
        extra = "ignore"

settings = Settings()

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    CELERY_BROKER_URL: str = "memory://"
    CELERY_RESULT_BACKEND: str = "cache+memory://"
    CELERY_TASK_ALWAYS_EAGER: bool = False
    TASK_SOFT_TIME_LIMIT: int = 55 * 60  # seconds
    DEBUG: bool = False  # Default value if missing
    LOG_LEVEL: str = "INFO"
    CORS_ORIGINS: list[str] = []

    # Root finding on the front / Lagrangian maps (absolute, in y)
    ROOT_TOL: float = 1e-12
    ROOT_MAX_ITER: int = 200
    # Half-width of the band around y_C(t) treated as "on the front"
    FRONT_TOL: float = 1e-12
    PROFILE_TOL: float = 1e-10
    MIXTURE_TOL: float = 1e-12

    FIT_MAX_NFEV: int = 500
    FIT_WORKERS: int = 1
    SIM_WORKERS: int = 1
    SIM_CHUNK_EVENTS: int = 65536
    DEFAULT_SEED: int = 20070726

    class Config:
        env_file = ".env"  # Optional (Pydantic auto-finds .env)
        env_file_encoding = "utf-8"  # For non-ASCII .env files


settings = Settings()  # Loads from .env automatically

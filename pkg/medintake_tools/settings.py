import logging
from functools import lru_cache

from pydantic import BaseSettings, ValidationError

from .errors import ConfigError


logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    log_level: str = "INFO"

    doc_length: int = 47
    folds: int = 5

    max_epochs: int = 30
    patience: int = 2
    lr_decay: float = 0.5
    restarts_allowed: int = 2

    parallelism: int = 1
    predict_batch_size: int = 256
    record_wall_time: bool = False

    class Config:
        env_prefix = "medint_"
        env_file = ".env"

    def schedule(self, **overrides):
        """Training schedule from these settings, with any non-None overrides
        (typically CLI flags) applied on top."""
        from .model import TrainSchedule

        values = {
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "lr_decay": self.lr_decay,
            "restarts_allowed": self.restarts_allowed,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})

        try:
            return TrainSchedule(**values)
        except ValidationError as e:
            raise ConfigError(f"invalid training schedule: {e}")


@lru_cache()
def get_settings() -> Settings:
    return Settings()

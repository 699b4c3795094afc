import os
import logging
from dataclasses import dataclass
from typing import Optional

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

"""Load .env variables"""
base_dir = os.path.abspath(os.path.join(os.path.dirname(__file__), "../.."))
dotenv_path = os.path.join(base_dir, ".env")
if os.path.exists(dotenv_path):
    load_dotenv(dotenv_path)
    logger.info(f"Loaded .env from {dotenv_path}")
else:
    logger.debug(f".env file not found at {dotenv_path}. Using system environment variables.")

LOG_FORMAT = "[%(asctime)s] %(levelname)s - %(message)s"


@dataclass(frozen=True)
class Settings:
    """Process-wide knobs read from the environment."""
    threads: int = 0
    max_dofs: int = 10**8
    max_fullgrid_values: int = 10**8
    output_dir: str = "output"
    log_file: str = "sgiif.log"
    log_level: str = "INFO"
    cache_dir: Optional[str] = None

    @property
    def n_jobs(self) -> int:
        """joblib worker count; 0 means one worker per core."""
        return -1 if self.threads <= 0 else self.threads


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(float(raw))
    except ValueError:
        logger.warning(f"Ignoring non-numeric {name}={raw!r}; using {default}")
        return default


def get_settings() -> Settings:
    """Read settings from the (already loaded) environment."""
    return Settings(
        threads=_int_env("SGIIF_THREADS", 0),
        max_dofs=_int_env("SGIIF_MAX_DOFS", 10**8),
        max_fullgrid_values=_int_env("SGIIF_MAX_FULLGRID_VALUES", 10**8),
        output_dir=os.getenv("SGIIF_OUTPUT_DIR") or "output",
        log_file=os.getenv("SGIIF_LOG_FILE") or "sgiif.log",
        log_level=(os.getenv("SGIIF_LOG_LEVEL") or "INFO").upper(),
        cache_dir=os.getenv("SGIIF_CACHE_DIR") or None,
    )


def setup_logging(log_file: Optional[str] = None, level: Optional[str] = None) -> None:
    """Configure root logging for an entry point (file + console)."""
    settings = get_settings()
    handlers = [logging.StreamHandler()]
    target = log_file if log_file is not None else settings.log_file
    if target:
        handlers.insert(0, logging.FileHandler(target, encoding="utf-8"))
    logging.basicConfig(
        level=getattr(logging, level or settings.log_level, logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )

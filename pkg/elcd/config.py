"""Environment-backed defaults.

Values come from the process environment, optionally seeded from a `.env`
file in the working directory. Command-line flags always win.
"""

import os
from typing import Optional

from dotenv import load_dotenv

from .errors import ConfigError

DEFAULT_SEED = 0
LOG_LEVELS = ("quiet", "info", "debug")

_loaded = False


def load_environment(dotenv_path: Optional[str] = None) -> None:
    """Load `.env` once per process."""
    global _loaded
    if _loaded and dotenv_path is None:
        return
    load_dotenv(dotenv_path=dotenv_path, override=False)
    _loaded = True


def resolve_seed(cli_seed: Optional[int] = None) -> int:
    """CLI flag, then ELCD_SEED, then the built-in default."""
    if cli_seed is not None:
        return int(cli_seed)
    load_environment()
    raw = os.getenv("ELCD_SEED")
    if raw is None or raw.strip() == "":
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        raise ConfigError("ELCD_SEED", f"expected an integer, got {raw!r}")


def log_level() -> str:
    load_environment()
    level = os.getenv("ELCD_LOG_LEVEL", "info").strip().lower()
    if level not in LOG_LEVELS:
        raise ConfigError("ELCD_LOG_LEVEL", f"expected one of {', '.join(LOG_LEVELS)}, got {level!r}")
    return level


def slow_tests_enabled() -> bool:
    load_environment()
    return os.getenv("ELCD_RUN_SLOW", "").strip() not in ("", "0", "false", "no")

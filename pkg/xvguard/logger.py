from __future__ import annotations

import os
import sys
import threading

from loguru import logger
from loguru._logger import Logger as LoguruLogger

__all__ = "Logger", "get_logger"


logger.remove()

DEFAULT_LOGGER_FORMAT = "<green>{time:HH:mm:ss}</green> <bg #0f0707>[{extra[name]}]</bg #0f0707> <level>{message}</level>"

_registered: dict[str, LoguruLogger] = {}
_lock = threading.Lock()


def _log_level() -> str:
    """Logging level from `XVGUARD_LOG_LEVEL` (defaults to INFO)."""
    return os.environ.get("XVGUARD_LOG_LEVEL", "INFO").upper()


def get_logger(name: str, *, format: str | None = None) -> LoguruLogger:  # noqa: A002
    """
    Get a logger bound to `name`, registering its sink on first use.

    Module-level code uses this, classes inherit `Logger` instead.

    Args:
        name: Tag shown in every record
        format: Logging format to use.

    Examples:
        >>> log = get_logger("training")
        >>> log.info("epoch 1 done")
    """
    with _lock:
        if (bound := _registered.get(name)) is not None:
            return bound

        logger.add(
            sys.stderr,
            level=_log_level(),
            format=format or DEFAULT_LOGGER_FORMAT,
            filter=lambda record: record["extra"].get("name") == name,
        )
        bound = logger.bind(name=name).opt(colors=True)  # type: ignore[assignment]
        _registered[name] = bound
        return bound


class Logger:
    """
    Logger class that can be inherited for class based logging.

    Examples:
        >>> class Sweep(Logger, format="<level>{message}</level>"):
        ...     def run(self, cells):
        ...         self.logger.info(f"scoring {cells} cells")
        ...
        >>> Sweep().run(12)
        >>> Sweep.logger.warning("no attacks configured")
    """

    logger: LoguruLogger

    @classmethod
    def __init_subclass__(cls, *, format: str | None = None, **kwargs: object):  # noqa: A002
        """
        Args:
            format: Logging format to use.
        """
        super().__init_subclass__(**kwargs)
        cls.logger = get_logger(cls.__name__, format=format)

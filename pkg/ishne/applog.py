# ishne/applog.py
import logging
import os
from pathlib import Path
from typing import Optional, Union

LOG_FORMAT = "%(asctime)s %(levelname)s %(message)s"
LOG_NAME = "ishne_debug.log"

logger = logging.getLogger("ishne")


def _env_level() -> int:
    name = os.environ.get("ISHNE_LOG", "INFO").upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.INFO


def detach_file_handlers() -> None:
    for h in [h for h in logger.handlers if isinstance(h, logging.FileHandler)]:
        logger.removeHandler(h)
        h.close()


def setup_logging(out_dir: Optional[Union[str, Path]] = None, verbose: bool = False) -> logging.Logger:
    """
    Attach a stderr handler (once) and, for a run directory, a file handler.

    A run directory's log only ever receives that run's lines: any file
    handler left by an earlier call is closed first.
    """
    level = logging.DEBUG if verbose else _env_level()
    logger.setLevel(level)
    if not any(type(h) is logging.StreamHandler for h in logger.handlers):
        sh = logging.StreamHandler()
        sh.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        logger.addHandler(sh)
    detach_file_handlers()
    if out_dir is not None:
        log_path = (Path(out_dir) / LOG_NAME).resolve()
        log_path.parent.mkdir(parents=True, exist_ok=True)
        fh = logging.FileHandler(log_path, encoding="utf-8")
        fh.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(fh)
    return logger

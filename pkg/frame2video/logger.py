import sys
from pathlib import Path
from typing import Optional, Union

from loguru import logger

CONSOLE_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan> - <level>{message}</level>"
)
FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function} - {message}"


def setup_logger(
        enable_file_logging: bool = False,
        log_level: str = "INFO",
        log_dir: Optional[Union[str, Path]] = None
) -> None:
    """
    Configure logging for a frame2video process.

    Safe to call more than once; every call replaces the previous sinks.

    Args:
        enable_file_logging: Also write a daily-rotated DEBUG log
        log_level: Minimum console level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_dir: Directory for the file sink, "logs" when not given
    """
    logger.remove()
    logger.add(sys.stderr, format=CONSOLE_FORMAT, level=log_level)

    if not enable_file_logging:
        return

    directory = Path(log_dir) if log_dir is not None else Path("logs")
    directory.mkdir(parents=True, exist_ok=True)
    logger.add(
        directory / "frame2video_{time:YYYY-MM-DD}.log",
        rotation="00:00",
        retention="30 days",
        level="DEBUG",
        format=FILE_FORMAT
    )
    logger.debug(f"File logging enabled - writing to {directory}/")

"""Command-level DRAM simulator with secret TRR mechanisms and the tooling to
reverse-engineer, bypass and evaluate them."""
import logging
from logging.handlers import RotatingFileHandler
import os

__version__ = "0.1.0"


def configure_logging(log_dir: str = "logs") -> logging.Logger:
    """Attach the rotating file handler to the package logger."""
    if not os.path.exists(log_dir):
        os.makedirs(log_dir)

    logger = logging.getLogger("trrsim")
    log_path = os.path.join(log_dir, "trrsim.log")
    if any(getattr(h, "baseFilename", None) == os.path.abspath(log_path) for h in logger.handlers):
        return logger

    file_handler = RotatingFileHandler(log_path, maxBytes=50*1024*1024, backupCount=2)
    file_handler.setFormatter(logging.Formatter(
        '%(asctime)s %(levelname)s: %(message)s [in %(pathname)s:%(lineno)d]'
    ))
    file_handler.setLevel(logging.INFO)
    logger.addHandler(file_handler)

    logger.setLevel(logging.INFO)
    logger.info('trrsim startup')
    return logger

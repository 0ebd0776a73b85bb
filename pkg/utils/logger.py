"""Logging setup shared by the CLI and the services."""
import logging
import sys

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

_configured = False


def setup_logging(level: str = "INFO") -> None:
    """Configure root logging to stderr once per process."""
    global _configured
    numeric = getattr(logging, str(level).upper(), logging.INFO)
    if _configured:
        logging.getLogger().setLevel(numeric)
        return
    logging.basicConfig(level=numeric, format=LOG_FORMAT, stream=sys.stderr)
    _configured = True

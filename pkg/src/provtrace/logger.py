import logging
import sys

_setup_done = False

_LEVELS = {
    -1: logging.WARNING,
    0: logging.INFO,
    1: logging.DEBUG,
}


def setup_logging(verbosity: int = 0):
    global _setup_done
    if _setup_done:
        return

    # Leave embedding applications in charge of their own handlers
    if logging.root.handlers:
        return

    level = _LEVELS.get(max(-1, min(verbosity, 1)), logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    _setup_done = True


def get_logger(name: str):
    # Do not auto-setup logging to allow embedding
    return logging.getLogger(name)

import json
import os
from pathlib import Path
import platformdirs

try:
    from .errors import ConfigError
    from .logger import get_logger
except ImportError:  # pragma: no cover
    from errors import ConfigError  # type: ignore
    from logger import get_logger  # type: ignore

APP_NAME = "provtrace"
CONFIG_DIR = Path.home() / f".{APP_NAME}"
CONFIG_PATH = CONFIG_DIR / "config.json"
_CONFIG_CACHE = None

logger = get_logger("provtrace.paths")

DEFAULTS = {
    "profiles_path": None,
    "trusted_networks": None,
    "min_signature_length": 3,
    "gap_budget": None,
    "default_format": "pipe",
}


def get_config_path() -> Path:
    """Config file location: PROVTRACE_CONFIG env -> ~/.provtrace/config.json."""
    env_path = os.environ.get("PROVTRACE_CONFIG")
    if env_path:
        return Path(env_path).expanduser()
    return CONFIG_PATH


def load_config() -> dict:
    global _CONFIG_CACHE
    if _CONFIG_CACHE is not None:
        return _CONFIG_CACHE
    path = get_config_path()
    config = dict(DEFAULTS)
    if path.exists():
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"Cannot read config file {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"Config file {path} must contain a JSON object")
        config.update(loaded)
    _validate(config, path)
    _CONFIG_CACHE = config
    return _CONFIG_CACHE


def reset_config_cache():
    global _CONFIG_CACHE
    _CONFIG_CACHE = None


def _validate(config: dict, path: Path):
    min_len = config.get("min_signature_length")
    if not isinstance(min_len, int) or isinstance(min_len, bool) or min_len < 1:
        raise ConfigError(f"{path}: min_signature_length must be a positive integer, got {min_len!r}")
    gap = config.get("gap_budget")
    if gap is not None and (not isinstance(gap, int) or isinstance(gap, bool) or gap < 0):
        raise ConfigError(f"{path}: gap_budget must be null or a non-negative integer, got {gap!r}")
    if config.get("default_format") not in ("pipe", "jsonl"):
        raise ConfigError(f"{path}: default_format must be 'pipe' or 'jsonl'")
    networks = config.get("trusted_networks")
    if networks is not None and (
        not isinstance(networks, list) or not all(isinstance(n, str) for n in networks)
    ):
        raise ConfigError(f"{path}: trusted_networks must be a list of CIDR strings")


def get_data_dir() -> Path:
    """
    Returns the data directory holding analyst state (shared profiles).
    Order: PROVTRACE_DATA_DIR env -> config PROVTRACE_DATA_DIR -> platformdirs.user_data_dir("provtrace").
    """
    env_path = os.environ.get("PROVTRACE_DATA_DIR")
    if env_path:
        path = Path(env_path).expanduser().resolve()
    else:
        cfg = load_config()
        cfg_path = cfg.get("PROVTRACE_DATA_DIR")
        if cfg_path:
            path = Path(cfg_path).expanduser().resolve()
        else:
            path = Path(platformdirs.user_data_dir(appname=APP_NAME, appauthor=False))

    path.mkdir(parents=True, exist_ok=True)
    return path


def get_profiles_path() -> Path | None:
    """Profile config to use when no --profiles flag is given, if any."""
    configured = load_config().get("profiles_path")
    if configured:
        return Path(configured).expanduser()
    candidate = get_data_dir() / "profiles.json"
    if candidate.exists():
        logger.debug(f"Using profiles from data dir: {candidate}")
        return candidate
    return None

import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Tuple

from app.errors import ConfigError

logger = logging.getLogger(__name__)


def parse_int_list(text: str) -> List[int]:
    return [int(part) for part in text.replace("[", "").replace("]", "").split(",") if part.strip()]


def parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"'{text}' is not a boolean")


MODEL_KEYS: Dict[str, Callable[[str], Any]] = {
    "stage_dims": parse_int_list,
    "stage_depths": parse_int_list,
    "stage_heads": parse_int_list,
    "num_classes": int,
    "ffn_ratio": float,
    "decay": str,
    "fusion_mode": str,
    "prior": str,
    "decompose": parse_bool,
    "decoder_dim": int,
    "init_seed": int,
    "numeric_mode": str,
}

TRAIN_KEYS: Dict[str, Callable[[str], Any]] = {
    "steps": int,
    "batch_size": int,
    "lr": float,
    "weight_decay": float,
    "poly_power": float,
    "image_size": int,
    "train_samples": int,
    "val_samples": int,
    "log_every": int,
    "augment": parse_bool,
}

KNOWN_KEYS: Dict[str, Callable[[str], Any]] = {**MODEL_KEYS, **TRAIN_KEYS}


def safe_get(values: Mapping[str, Any], key: str, default: Any = None) -> Any:
    """
    Get a config value by key, falling back to the default when the file omits it.
    """
    if key in values:
        return values[key]
    logger.debug(f"Config key '{key}' not set. Using default: {default}")
    return default


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, Any]:
    """
    Parse ``key = value`` lines into typed values.

    ``#`` starts a comment; blank lines are skipped. Unknown keys, duplicate keys and
    values that do not convert raise ``ConfigError`` naming the source and line.
    """
    values: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: key '{key}' given twice")
        try:
            values[key] = KNOWN_KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for '{key}': {exc}") from None
    return values


def read_config_file(path) -> Dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config_text(text, source=str(path))


def split_config(values: Mapping[str, Any]) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    """Separate model keys from training keys."""
    model = {k: v for k, v in values.items() if k in MODEL_KEYS}
    train = {k: v for k, v in values.items() if k in TRAIN_KEYS}
    return model, train


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(values: Mapping[str, Any]) -> str:
    """Inverse of ``parse_config_text`` for known keys, in insertion order."""
    lines = []
    for key, value in values.items():
        if key not in KNOWN_KEYS:
            raise ConfigError(f"Cannot write unknown config key '{key}'")
        lines.append(f"{key} = {_format_value(value)}")
    return "\n".join(lines) + "\n"

"""Loading and validating scenario configuration files."""
import logging
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ValidationError

from guardnet.exceptions import ConfigError
from guardnet.schemas.simulation import AdversarySpec, Behavior, SimConfig

logger = logging.getLogger(__name__)

ADVERSARY_PREFIX = "adv."

# flat config key -> path inside SimConfig
_FIELD_PATHS: Dict[str, Tuple[str, ...]] = {
    "node_count": ("node_count",),
    "message_count": ("message_count",),
    "wait_time_max_s": ("wait_time_max_s",),
    "message_length": ("message_length",),
    "controller_host": ("controller", "host"),
    "controller_port": ("controller", "port"),
    "seed": ("seed",),
    "m": ("m",),
    "latency_base_us": ("latency", "base_us"),
    "latency_jitter_us": ("latency", "jitter_us"),
    "loss_prob": ("latency", "loss_prob"),
    "time_scale": ("time_scale",),
    "output_dir": ("output_dir",),
    "chain_dump_limit": ("chain_dump_limit",),
}
_KEY_FOR_PATH = {path: key for key, path in _FIELD_PATHS.items()}


def parse_adversary(key: str, value: str) -> AdversarySpec:
    """`adv.<index>=<behavior>:<fraction>[,<behavior>:<fraction>...]`"""
    try:
        index = int(key[len(ADVERSARY_PREFIX):])
    except ValueError:
        raise ConfigError(key, "adversary key must be adv.<node index>")
    behaviors: List[Tuple[Behavior, float]] = []
    for part in value.split(","):
        name, _, fraction = part.strip().partition(":")
        try:
            behaviors.append((Behavior(name.strip().lower()), float(fraction) if fraction else 1.0))
        except ValueError:
            raise ConfigError(key, f"bad adversary behavior {part.strip()!r}")
    try:
        return AdversarySpec(node_index=index, behaviors=behaviors)
    except ValidationError as exc:
        raise ConfigError(key, exc.errors()[0]["msg"])


def _error_field(exc: ValidationError) -> str:
    loc = tuple(str(part) for part in exc.errors()[0]["loc"])
    # the model-level check only concerns the adversary list
    if not loc or loc[0] == "adversaries":
        return "adv"
    return _KEY_FOR_PATH.get(loc, ".".join(loc) or "config")


def _default_fields(name: str) -> Dict[str, Any]:
    """Fields of a nested default, so a partial override keeps the rest."""
    default = SimConfig.model_fields[name].get_default(call_default_factory=True)
    return default.model_dump() if isinstance(default, BaseModel) else {}


def build_config(values: Dict[str, Any]) -> SimConfig:
    """Validate flat key=value pairs into a SimConfig."""
    raw: Dict[str, Any] = {}
    adversaries: List[AdversarySpec] = []
    for key, value in values.items():
        if value is None:
            raise ConfigError(key, "missing value")
        if key.startswith(ADVERSARY_PREFIX):
            adversaries.append(parse_adversary(key, str(value)))
            continue
        path = _FIELD_PATHS.get(key)
        if path is None:
            raise ConfigError(key, "unknown key")
        target = raw
        for part in path[:-1]:
            target = target.setdefault(part, _default_fields(part))
        target[path[-1]] = value
    if adversaries:
        raw["adversaries"] = sorted(adversaries, key=lambda spec: spec.node_index)
    try:
        return SimConfig.model_validate(raw)
    except ValidationError as exc:
        field = _error_field(exc)
        raise ConfigError(field, exc.errors()[0]["msg"]) from exc


def load_config(path: Union[str, Path]) -> SimConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("path", f"config file {path} does not exist")
    config = build_config(dict(dotenv_values(path)))
    logger.info(f"Loaded config {path}: {config.node_count} nodes, seed {config.seed}")
    return config

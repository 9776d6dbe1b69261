"""Persistence utilities for experiment configs and kernel specs."""
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import yaml
from pydantic import ValidationError

from dglego.config import CONFIGS_DIR, OUTPUT_DIR
from dglego.exceptions import ConfigError
from dglego.models.experiment import ExperimentConfig
from dglego.models.kernel import KernelSpec

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _nest_dotted(flat: Dict[str, Any]) -> Dict[str, Any]:
    """Expand ``{"a.b": 1}`` into ``{"a": {"b": 1}}``; nested dicts are merged."""
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        if isinstance(value, dict):
            value = _nest_dotted(value)
        parts = str(key).split(".")
        node = nested
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"key {key!r} conflicts with scalar {part!r}")
            node = child
        leaf = parts[-1]
        if isinstance(value, dict) and isinstance(node.get(leaf), dict):
            node[leaf].update(value)
        else:
            node[leaf] = value
    return nested


def parse_override(override: str) -> Dict[str, Any]:
    """
    Parse one ``section.key=value`` override; the value is read as a YAML scalar.

    Raises:
        ConfigError: If the override has no ``=`` or an empty key
    """
    key, sep, raw = override.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {override!r} must look like section.key=value")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse value of override {override!r}: {e}") from e
    return _nest_dotted({key.strip(): value})


def _merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def resolve_config_path(path: PathLike) -> Path:
    """Accept a path or the bare name of a shipped config under ``configs/``."""
    path = Path(path)
    if path.exists():
        return path
    for candidate in (CONFIGS_DIR / path, CONFIGS_DIR / f"{path}.yaml"):
        if candidate.exists():
            return candidate
    raise ConfigError(f"config file {path} not found")


def load_config(path: Optional[PathLike] = None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """
    Load, merge and validate an experiment config.

    Args:
        path: YAML file (sections or dotted keys); None starts from defaults
        overrides: ``section.key=value`` strings applied in order

    Returns:
        ExperimentConfig

    Raises:
        ConfigError: On unreadable YAML, unknown keys or invalid values
    """
    raw: Dict[str, Any] = {}
    if path is not None:
        resolved = resolve_config_path(path)
        try:
            loaded = yaml.safe_load(resolved.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML in {resolved}: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"{resolved} must hold a mapping of sections")
        raw = _nest_dotted(loaded)
    for override in overrides:
        raw = _merge(raw, parse_override(override))
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration:\n{e}") from e


def config_to_dict(config: ExperimentConfig) -> Dict[str, Any]:
    return config.model_dump(mode="json")


def config_hash(config: ExperimentConfig) -> str:
    """sha256 of the canonical JSON form (first 16 hex digits)."""
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def run_directory(config: ExperimentConfig, step: Optional[str] = None) -> Path:
    root = Path(config.output_dir or OUTPUT_DIR) / config.run_name
    return root / step if step else root


def save_resolved_config(config: ExperimentConfig, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        yaml.safe_dump(config_to_dict(config), f, sort_keys=False)
    return path


def save_kernel_specs(specs: Sequence[KernelSpec], path: PathLike) -> Path:
    """One entry per activated layer, in layer order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = [{"layer": i, **spec.model_dump(mode="json")} for i, spec in enumerate(specs)]
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
    logger.info(f"Saved {len(specs)} kernel specs to {path}")
    return path


def load_kernel_specs(path: PathLike) -> List[KernelSpec]:
    """
    Read specs written by ``save_kernel_specs``.

    Raises:
        ConfigError: If the file is missing or malformed
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"kernel spec file {path} not found; run fit-kernel first or pass --kernel-specs")
    try:
        entries = json.loads(path.read_text())
        entries = sorted(entries, key=lambda e: e["layer"])
        return [KernelSpec.model_validate({k: v for k, v in e.items() if k != "layer"}) for e in entries]
    except (json.JSONDecodeError, KeyError, TypeError, ValidationError) as e:
        raise ConfigError(f"malformed kernel spec file {path}: {e}") from e

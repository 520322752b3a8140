"""Utility functions for the frame2video package"""
import os
import random
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import torch
import yaml
from loguru import logger

from frame2video.errors import ConfigurationError
from frame2video.models import RunConfig

CONFIG_ENV_VAR = "F2V_CONFIG"
SEEDED_STAGES = ("synth", "train", "score")


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge `override` into a copy of `base`; None values in override are skipped."""
    merged = dict(base)
    for key, value in override.items():
        if value is None:
            continue
        if isinstance(value, dict):
            current = merged.get(key)
            merged[key] = deep_merge(current if isinstance(current, dict) else {}, value)
        else:
            merged[key] = value
    return merged


def load_run_config(
        path: Optional[Union[str, Path]] = None,
        overrides: Optional[Dict[str, Any]] = None
) -> RunConfig:
    """
    Build the RunConfig: defaults <- YAML file <- command-line overrides.

    The file is `path` if given, else $F2V_CONFIG, else none.
    The top-level `seed` also seeds the synth, train and score stages, except where a
    stage sets its own seed. A command-line seed wins over stage seeds from the file.
    """
    path = path or os.getenv(CONFIG_ENV_VAR)
    data: Dict[str, Any] = {}

    if path:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        with open(path) as f:
            try:
                data = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigurationError(f"invalid YAML in {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path} must hold a mapping at top level")
        logger.debug(f"Loaded config file {path}")

    overrides = overrides or {}
    merged = deep_merge(data, overrides)
    seed = merged.get("seed")
    if seed is not None:
        from_cli = overrides.get("seed") is not None
        for stage in SEEDED_STAGES:
            explicit = _stage_seed(overrides, stage) is not None
            if not from_cli:
                explicit = explicit or _stage_seed(data, stage) is not None
            section = merged.get(stage)
            if not explicit and (section is None or isinstance(section, dict)):
                merged[stage] = {**(section or {}), "seed": seed}

    return RunConfig.model_validate(merged)


def _stage_seed(source: Dict[str, Any], stage: str) -> Optional[Any]:
    section = source.get(stage)
    return section.get("seed") if isinstance(section, dict) else None


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)

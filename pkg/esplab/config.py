"""
Run configuration for ESP Lab commands
"""

import json
import logging
import os

from esplab.errors import InvalidInput

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_FILE = "esplab_config.json"

DEFAULT_CONFIG = {
    "T": 200,
    "tol": 1e-12,
    "max_iter": 1000,
    "mode": "picard",
    "sampling_points": 4096,
    "state_box": 1.0,
    "input_box": 1.0,
    "seed": 0,
    "fd_order": 3,
    "memory": 4,
    "trials": 50,
    "ball_M": 1.0,
    "ball_L": None,
    "workers": 1,
}


def load_config(config_file=DEFAULT_CONFIG_FILE):
    """Load a run configuration, writing the defaults on first use"""
    if os.path.exists(config_file):
        try:
            with open(config_file, "r") as f:
                stored = json.load(f)
        except json.JSONDecodeError as e:
            raise InvalidInput(f"{config_file}: malformed JSON at line {e.lineno} column {e.colno}: {e.msg}")
        if not isinstance(stored, dict):
            raise InvalidInput(f"{config_file}: expected a JSON object")
        unknown = sorted(set(stored) - set(DEFAULT_CONFIG))
        if unknown:
            logger.warning("Unknown config keys kept as-is: %s", ", ".join(unknown))
        return {**DEFAULT_CONFIG, **stored}

    config = dict(DEFAULT_CONFIG)
    save_config(config, config_file)
    logger.info("Wrote default config to %s", config_file)
    return config


def save_config(config, config_file=DEFAULT_CONFIG_FILE):
    """Save configuration"""
    with open(config_file, "w") as f:
        json.dump(config, f, indent=2)


def merge_overrides(config, **overrides):
    """Config with every override that is not None applied"""
    merged = dict(config)
    merged.update({key: value for key, value in overrides.items() if value is not None})
    return merged

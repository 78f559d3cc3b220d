"""JSON run configuration: one object per subcommand, keys mirroring CLI flags.

Example::

    {
      "synth":  {"out": "data", "genres": 6, "clips_per_genre": "15,14,11,10,9,7", "seed": 7},
      "trials": {"trials": 50, "epochs": 6, "base_seed": 100, "jobs": 4}
    }

Keys use the flag name with dashes replaced by underscores. Flags given on
the command line win over file values; unknown sections or keys are errors.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ConfigError


def load_config(path) -> dict[str, dict]:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict) or not all(isinstance(v, dict) for v in data.values()):
        raise ConfigError(f"{path}: expected an object of per-command objects")
    return data


def merge(section: str, values: dict, config: dict[str, dict], allowed: set[str]) -> dict:
    """Fill ``None`` entries of ``values`` from ``config[section]``."""
    unknown_sections = set(config) - {section} - _KNOWN_SECTIONS
    if unknown_sections:
        raise ConfigError(f"unknown config sections: {sorted(unknown_sections)}")
    file_values = config.get(section, {})
    unknown = set(file_values) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    merged = dict(values)
    for key, val in file_values.items():
        if merged.get(key) is None:
            merged[key] = val
    return merged


_KNOWN_SECTIONS = {"synth", "separate", "featurize", "trials", "report", "similar", "demo"}

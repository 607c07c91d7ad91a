"""Metric-learning toolkit for neck structures and retrieval training tricks."""

from __future__ import annotations

import json
import logging
from pathlib import Path

from .const import DOMAIN

_LOGGER = logging.getLogger(__name__)


def _read_version() -> str:
    """Read the package version from manifest.json."""
    manifest_path = Path(__file__).with_name("manifest.json")
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, ValueError) as err:
        _LOGGER.warning("Could not read %s manifest: %s", DOMAIN, err)
        return "0.0.0"
    return manifest.get("version", "0.0.0")


__version__ = _read_version()

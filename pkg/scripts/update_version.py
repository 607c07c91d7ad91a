#!/usr/bin/env python3
"""Bump the necklab version in necklab/manifest.json."""
import json
import re
import sys
from pathlib import Path

MANIFEST_PATH = Path(__file__).resolve().parent.parent / "necklab" / "manifest.json"
VERSION_PATTERN = re.compile(r"^\d+\.\d+\.\d+(?:[-.][0-9A-Za-z.]+)?$")


def update_version(version: str, manifest_path: Path = MANIFEST_PATH) -> str:
    """Write ``version`` into the manifest and return the previous one."""
    if not VERSION_PATTERN.match(version):
        raise ValueError(f"not a semantic version: {version!r}")
    if not manifest_path.exists():
        raise FileNotFoundError(manifest_path)

    manifest = json.loads(manifest_path.read_text())
    previous = manifest.get("version", "")
    manifest["version"] = version
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return previous


if __name__ == "__main__":
    if len(sys.argv) != 2:
        print("Usage: update_version.py <version>")
        sys.exit(1)

    try:
        old = update_version(sys.argv[1])
    except (ValueError, FileNotFoundError) as err:
        print(f"Error: {err}")
        sys.exit(1)
    print(f"Updated {MANIFEST_PATH.name} from {old or 'unset'} to {sys.argv[1]}")

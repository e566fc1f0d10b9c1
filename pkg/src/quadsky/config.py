"""Plain ``key = value`` configuration files."""

from __future__ import annotations

from pathlib import Path
from typing import Union

from .core import QuadSkyError


def parse_kv(path: Union[str, Path]) -> dict[str, str]:
    """Read ``key = value`` (or ``key: value``) lines. ``#`` starts a comment.

    Keys are lower-cased and dashes become underscores, so ``--delta-metric``
    style names work too. A repeated key is an error.
    """
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            sep = "=" if "=" in line else ":" if ":" in line else None
            if sep is None:
                raise QuadSkyError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split(sep, 1))
            key = key.lower().replace("-", "_").lstrip("_")
            if not key:
                raise QuadSkyError(f"{path}:{lineno}: empty key")
            if key in out:
                raise QuadSkyError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value
    return out

"""Artifact writing: embedded provenance header and atomic replacement."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

from . import __version__

CONFIG_PREFIX = "# config: "
VERSION_PREFIX = "# version: "


def header_lines(config: dict) -> str:
    return (f"{VERSION_PREFIX}spindirac {__version__}\n"
            f"{CONFIG_PREFIX}{json.dumps(config, sort_keys=True, separators=(',', ':'))}\n")


def with_header(body: str, config: dict) -> str:
    return header_lines(config) + body


def embedded_config(text: str) -> dict:
    """Recover the resolved config from an artifact."""
    for line in text.splitlines():
        if line.startswith(CONFIG_PREFIX):
            return json.loads(line[len(CONFIG_PREFIX):])
    raise ValueError("artifact carries no embedded config")


def json_document(result, config: dict) -> str:
    doc = {"version": f"spindirac {__version__}", "config": config, "result": result}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def atomic_write(path, text: str) -> None:
    """Write to a temporary file in the target directory, then rename over."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def strip_comments(text: str) -> str:
    return "".join(line + "\n" for line in text.splitlines() if not line.startswith("#"))

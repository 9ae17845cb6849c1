"""Prompt templates stored as text files with ``{name}`` placeholders."""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources
from pathlib import Path

_PLACEHOLDER = re.compile(r"\{(\w+)\}")


@lru_cache(maxsize=None)
def load_template(name: str, directory: str | None = None) -> str:
    """Read ``<name>.txt`` from directory, falling back to the bundled set."""
    if directory:
        path = Path(directory) / f"{name}.txt"
        if path.exists():
            return path.read_text(encoding="utf-8")
    return resources.files("websynth").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")


def render(template: str, **values: object) -> str:
    """Fill known placeholders; any other braces (JSON examples) are left alone."""
    return _PLACEHOLDER.sub(
        lambda m: str(values[m.group(1)]) if m.group(1) in values else m.group(0), template
    )


def prompt(name: str, directory: str | None = None, **values: object) -> str:
    return render(load_template(name, directory), **values)

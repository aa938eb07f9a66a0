"""Key-value report files with full-precision numbers."""

from __future__ import annotations

import math
from pathlib import Path


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.17g}"
    return str(value).replace("\n", " ")


def write_kv(path, items: dict) -> None:
    lines = [f"{key} = {format_value(value)}" for key, value in items.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_kv(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out

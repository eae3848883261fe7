"""Network config loading: shipped names or JSON paths, plus key=value overrides."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

SHIPPED = ("vocals-table1", "drums-table1", "bass-table1", "other-table1",
           "tiny", "tiny-no-dilation", "tiny-standard-dilation")


def load_config(name_or_path: str, overrides: list[str] | None = None) -> dict:
    path = Path(name_or_path)
    if path.suffix == ".json" or path.exists():
        if not path.exists():
            raise FileNotFoundError(f"config file {path} does not exist")
        cfg = json.loads(path.read_text())
    elif name_or_path in SHIPPED:
        text = resources.files("d3sep.configs").joinpath(
            f"{name_or_path}.json").read_text()
        cfg = json.loads(text)
    else:
        raise FileNotFoundError(
            f"unknown config {name_or_path!r}; shipped configs: {', '.join(SHIPPED)}")
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _set_path(cfg, key.split("."), value)
    return cfg


def _set_path(node, keys: list[str], value):
    for key in keys[:-1]:
        if isinstance(node, list):
            node = node[int(key)]
        else:
            node = node.setdefault(key, {})
    last = keys[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value

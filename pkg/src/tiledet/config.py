"""Flat key-value run configuration.

File syntax: one ``key = value`` per line, ``#`` comments. Documented keys:
tile_size, stride, conf, nms_iou, tau, lambda, mu, input_full,
classes_file, backend.kind, backend.cmd, backend.dir, seed.
"""

from __future__ import annotations

from pathlib import Path

DEFAULTS: dict[str, str] = {
    "tile_size": "640",
    "stride": "512",
    "conf": "0.25",
    "nms_iou": "0.45",
    "tau": "16",
    "lambda": "0.2",
    "mu": "0",
    "input_full": "640",
    "classes_file": "",
    "backend.kind": "",
    "backend.cmd": "",
    "backend.dir": "",
    "seed": "42",
}


class ConfigError(ValueError):
    pass


def load_config(path: str | Path) -> dict[str, str]:
    """Parse a flat key-value config file; unknown keys rejected."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def effective_config(file_config: dict[str, str] | None, overrides: dict[str, str]) -> dict[str, str]:
    """Defaults, overlaid by the config file, overlaid by CLI flags (flags win)."""
    merged = dict(DEFAULTS)
    if file_config:
        merged.update(file_config)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged

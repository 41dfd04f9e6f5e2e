"""Flat ``key = value`` experiment configs and run manifests."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import platform
import subprocess
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .rltrain import TrainConfig

# keys that name inputs/outputs rather than training hyperparameters
EXPERIMENT_KEYS: dict[str, type] = {
    "train_src": str,
    "train_tgt": str,
    "train_origin": str,
    "dev_src": str,
    "dev_tgt": str,
    "test_src": str,
    "test_tgt": str,
    "src_vocab": str,
    "tgt_vocab": str,
    "mono_src": str,
    "mono_tgt": str,
    "init_checkpoint": str,
    "corpus_max_len": int,
    "first_side": str,
    "rl_on": str,
    "alphas": str,
}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


def _train_types() -> dict[str, type]:
    hints = {f.name: type(f.default) for f in dataclasses.fields(TrainConfig)}
    return hints


def _coerce(key: str, raw: str, typ: type) -> Any:
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {typ.__name__}") from None


def parse_config(text: str) -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    types = {**_train_types(), **EXPERIMENT_KEYS}
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno} is not key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(key, "unknown key")
        out[key] = _coerce(key, value, types[key])
    return out


def load_config(path: str | Path) -> dict[str, Any]:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def split_config(values: dict[str, Any]) -> tuple[TrainConfig, dict[str, Any]]:
    train_keys = set(_train_types())
    try:
        cfg = TrainConfig(**{k: v for k, v in values.items() if k in train_keys})
    except ValueError as exc:
        key = next((k for k in ("alpha", "sampling", "lr_mle", "lr_rl", "lr_baseline") if k in str(exc)), "config")
        raise ConfigError(key, str(exc)) from None
    return cfg, {k: v for k, v in values.items() if k not in train_keys}


def format_config(cfg: TrainConfig, extra: dict[str, Any]) -> str:
    lines = [f"{k} = {v}" for k, v in sorted(extra.items())]
    lines += [f"{f.name} = {getattr(cfg, f.name)}" for f in dataclasses.fields(TrainConfig)]
    return "\n".join(lines) + "\n"


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def git_describe() -> str:
    try:
        res = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            cwd=Path(__file__).resolve().parent,
            timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return res.stdout.strip() or "unknown"


def write_manifest(out_dir: Path, command: str, cfg: TrainConfig | None, extra: dict, inputs: dict[str, str]) -> Path:
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "seed": cfg.seed if cfg is not None else extra.get("seed"),
        "config": dataclasses.asdict(cfg) if cfg is not None else None,
        "experiment": extra,
        "git": git_describe(),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "data_sha256": {k: file_sha256(v) for k, v in sorted(inputs.items()) if v and Path(v).is_file()},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def config_from_manifest(path: str | Path) -> dict[str, Any]:
    m = json.loads(Path(path).read_text(encoding="utf-8"))
    values = dict(m.get("experiment") or {})
    values.pop("seed", None)
    values.update(m.get("config") or {})
    return values

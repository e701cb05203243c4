"""Experiment configuration: one serializable source of truth.

A config digest is stamped into every output artifact so runs are
content-addressed and identical replay configs reproduce identical
reports.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

from .gateway import DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE
from .retrieval import DEFAULT_DIM, DEFAULT_TOP_K


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dataset: str = ""
    dataset_name: str = ""
    method: str = "icrag"
    k: int = 5
    seed: int = 7
    folds: str = "all"  # "all" or a fold index as a string
    kb_paths: list[str] = field(default_factory=list)
    external_code_dir: str = ""
    out_dir: str = "out"
    workers: int = 0  # 0 = logical cores

    # pool composition
    r_in_domain: float = 1.0
    r_external: float = 0.0
    include_text: bool = True
    include_code: bool = True

    # gateway
    model_id: str = "scripted"
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    endpoint: str = ""
    api_key_env: str = "ICRAG_API_KEY"
    cassette_path: str = ""
    cassette_mode: str = "replay_strict"

    # retrieval
    embedding_dim: int = DEFAULT_DIM
    embedder_seed: int = 0
    retrieval_k: int = DEFAULT_TOP_K

    # engine / sandbox
    max_iterations: int = 10
    exec_mode: str = "whole"
    lmulator: bool = False
    exec_timeout_ms: int = 10_000
    shim_cmd: str = ""

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]

    def to_json(self) -> dict:
        data = asdict(self)
        data["config_digest"] = self.digest()
        return data


_BOOL_NAMES = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def load_config(path: str | None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Config file plus ``key=value`` command-line overrides."""
    data: dict = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    config = ExperimentConfig()
    known = set(vars(config))
    for key, value in data.items():
        if key == "config_digest":
            continue
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(config, key, value)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, raw = item.partition("=")
        key = key.strip()
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(config, key)
        setattr(config, key, _coerce(raw.strip(), current, key))
    return config


def _coerce(raw: str, current, key: str):
    if isinstance(current, bool):
        try:
            return _BOOL_NAMES[raw.lower()]
        except KeyError:
            raise ConfigError(f"{key}: expected a boolean, got {raw!r}") from None
    if isinstance(current, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if isinstance(current, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    if isinstance(current, list):
        return [part for part in raw.split(",") if part]
    return raw

"""Declarative run configuration shared by every subcommand.

Values resolve as command-line flags over the config file over built-in
defaults; the source of every non-default value is recorded.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .errors import ConfigError
from .train.config import FinetuneConfig, PretrainConfig, from_dict, merge, pretrain_defaults, to_dict


SECTIONS = {"seed", "output_dir", "repeats", "data", "pretrain", "finetune", "eval", "benchmark"}


@dataclass(frozen=True)
class DataConfig:
    annotations: Optional[str] = None
    split: Optional[str] = None  # saved FoldSplit; made from split_seed when absent
    split_seed: int = 0


@dataclass(frozen=True)
class EvalConfig:
    min_ap_box: Optional[float] = None
    min_ap_mask: Optional[float] = None


@dataclass(frozen=True)
class BenchmarkConfig:
    steps: int = 5
    batch_size: int = 2


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: Optional[str] = None
    repeats: int = 1
    data: DataConfig = field(default_factory=DataConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")


def read_config_file(path: os.PathLike) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    try:
        text = p.read_text()
        doc = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return doc


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and v:
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _nest(flat: dict) -> dict:
    out: dict = {}
    for key, v in flat.items():
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = v
    return out


def resolve(file_doc: Optional[dict] = None, flags: Optional[dict] = None) -> tuple[RunConfig, dict]:
    """Build the run config; ``flags`` maps dotted keys to values given on the command line.

    Returns the config and a mapping of dotted key -> "file" or "flag" for
    every value that did not come from the defaults.
    """
    file_doc = dict(file_doc or {})
    flags = {k: v for k, v in (flags or {}).items() if v is not None}
    sources = {k: "file" for k in _flatten(file_doc)}
    sources.update({k: "flag" for k in flags})
    merged = _flatten(file_doc)
    merged.update(flags)
    doc = _nest(merged)
    # checked on the raw document too: an empty unknown section flattens to nothing
    unknown = (set(doc) | set(file_doc)) - SECTIONS
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    pre = dict(doc.pop("pretrain", {}) or {})
    method = pre.get("method", "simmim")
    pretrain = merge(pretrain_defaults(method), pre) if pre else pretrain_defaults(method)
    kwargs: dict[str, Any] = {"pretrain": pretrain}
    if "finetune" in doc:
        kwargs["finetune"] = merge(FinetuneConfig(), doc.pop("finetune") or {})
    for name, cls in (("data", DataConfig), ("eval", EvalConfig), ("benchmark", BenchmarkConfig)):
        if name in doc:
            kwargs[name] = from_dict(cls, doc.pop(name) or {}, name)
    for k in ("seed", "output_dir", "repeats"):
        if k in doc:
            kwargs[k] = doc.pop(k)
    try:
        cfg = RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, dict(sorted(sources.items()))


def snapshot(cfg: RunConfig) -> dict:
    return to_dict(cfg)

"""Run configuration: cost constants, cluster shape, capacities.

Loaded from JSON with a version gate; unknown keys are rejected so typos in
experiment configs fail loudly rather than silently running defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Optional

from .errors import InvalidSpec


@dataclass
class Config:
    version: int = 1
    engines: int = 1
    kv_tokens: int = 120_000
    block_size: int = 16
    total_blocks: Optional[int] = None  # overrides kv_tokens/block_size when set
    c0_ms: float = 2.0
    c1_ms: float = 0.0062
    c2_ms: float = 5.0
    c3_ms: float = 0.002
    shared_kernel: bool = True
    latency_capacity: int = 6_144
    throughput_capacity: int = 64_000
    rtt_min_ms: float = 200.0
    rtt_max_ms: float = 300.0
    get_timeout_s: float = 300.0
    time_scale: float = 1.0  # serve mode: wall seconds per virtual second

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Config":
        if not isinstance(data, dict):
            raise InvalidSpec("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidSpec(f"unknown config keys: {', '.join(unknown)}")
        version = data.get("version", 1)
        if version != 1:
            raise InvalidSpec(f"unsupported config version {version!r}")
        cfg = cls(**data)
        if cfg.engines < 1:
            raise InvalidSpec("engines must be >= 1")
        if cfg.block_size < 1:
            raise InvalidSpec("block_size must be >= 1")
        if cfg.rtt_min_ms > cfg.rtt_max_ms:
            raise InvalidSpec("rtt_min_ms must not exceed rtt_max_ms")
        return cfg

    @classmethod
    def load(cls, path: str) -> "Config":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidSpec(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def blocks_total(self) -> int:
        if self.total_blocks is not None:
            return self.total_blocks
        return -(-self.kv_tokens // self.block_size)

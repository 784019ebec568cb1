"""Configuration of the protocol-level swarm simulator."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Optional

from ..errors import TraceIOError, ValidationError


@dataclass(frozen=True)
class SimConfig:
    """Swarm simulation settings; rates are per second, sizes in bytes."""

    n_blocks: int
    arrival_rate: float
    horizon_seconds: float
    block_bytes: int = 262144
    subblocks_per_block: int = 16
    peer_set_target: int = 50
    peer_set_min: int = 20
    active_set_size: int = 5
    reciprocated_slots_max: int = 4
    round_seconds: float = 10.0
    first_random_blocks: int = 4
    peer_upload_Bps: float = 39 * 1024
    publisher_upload_Bps: Optional[float] = None
    peer_download_Bps: Optional[float] = None
    seed_linger_rate: float = math.inf
    warmup_fraction: float = 0.2
    rng_seed: int = 0

    def __post_init__(self):
        if self.publisher_upload_Bps is None:
            object.__setattr__(self, "publisher_upload_Bps", float(self.peer_upload_Bps))
        if isinstance(self.seed_linger_rate, str):
            if self.seed_linger_rate.strip().lower() not in ("inf", "infinite", "infinity"):
                raise ValidationError("seed_linger_rate must be a positive rate or 'inf'")
            object.__setattr__(self, "seed_linger_rate", math.inf)
        self.validate()

    def validate(self) -> None:
        ints = (
            "n_blocks",
            "block_bytes",
            "subblocks_per_block",
            "peer_set_target",
            "peer_set_min",
            "active_set_size",
            "reciprocated_slots_max",
            "first_random_blocks",
        )
        for name in ints:
            val = getattr(self, name)
            if isinstance(val, bool) or not isinstance(val, int):
                raise ValidationError(f"{name} must be an integer, got {val!r}")
        if self.n_blocks < 1:
            raise ValidationError("n_blocks must be >= 1")
        if self.block_bytes < 1 or self.subblocks_per_block < 1:
            raise ValidationError("block_bytes and subblocks_per_block must be positive")
        if self.active_set_size < 1:
            raise ValidationError("active_set_size must be >= 1")
        if not 0 <= self.reciprocated_slots_max <= self.active_set_size:
            raise ValidationError("reciprocated_slots_max must lie in [0, active_set_size]")
        if self.peer_set_target < 1 or not 0 <= self.peer_set_min <= self.peer_set_target:
            raise ValidationError("need peer_set_target >= 1 and 0 <= peer_set_min <= peer_set_target")
        if self.first_random_blocks < 0:
            raise ValidationError("first_random_blocks must be >= 0")
        if self.peer_download_Bps is not None and not (
            isinstance(self.peer_download_Bps, (int, float))
            and math.isfinite(self.peer_download_Bps)
            and self.peer_download_Bps > 0
        ):
            raise ValidationError("peer_download_Bps must be finite and > 0 when set")
        for name in ("round_seconds", "peer_upload_Bps", "publisher_upload_Bps", "horizon_seconds"):
            val = getattr(self, name)
            if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
                raise ValidationError(f"{name} must be finite and > 0, got {val!r}")
        if not (math.isfinite(self.arrival_rate) and self.arrival_rate >= 0):
            raise ValidationError("arrival_rate must be finite and >= 0")
        if math.isnan(self.seed_linger_rate) or self.seed_linger_rate <= 0:
            raise ValidationError("seed_linger_rate must be > 0 or inf")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValidationError("warmup_fraction must lie in [0, 1)")
        if isinstance(self.rng_seed, bool) or not isinstance(self.rng_seed, int) or self.rng_seed < 0:
            raise ValidationError("rng_seed must be a nonnegative integer")

    @property
    def subblock_bytes(self) -> float:
        return self.block_bytes / self.subblocks_per_block

    @property
    def warmup_seconds(self) -> float:
        return self.warmup_fraction * self.horizon_seconds

    @property
    def nominal_mu(self) -> float:
        """Block download rate implied by one peer's upload capacity."""
        return self.peer_upload_Bps / self.block_bytes

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if math.isinf(d["seed_linger_rate"]):
            d["seed_linger_rate"] = "inf"
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        if not isinstance(data, dict):
            raise ValidationError("configuration must be a key/value object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown configuration keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ValidationError(str(exc)) from exc


def load_config(path) -> SimConfig:
    """Read a JSON configuration document with exact field names."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise TraceIOError(path, exc.strerror or str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    return SimConfig.from_dict(data)

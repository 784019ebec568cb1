"""Event traces: in-memory records and newline-delimited JSON files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Tuple

from ..errors import TraceIOError, ValidationError

JOIN = "JOIN"
BLOCK_COMPLETE = "BLOCK_COMPLETE"
DEPART = "DEPART"
SAMPLE = "SAMPLE"
EVENTS = (JOIN, BLOCK_COMPLETE, DEPART, SAMPLE)

Record = Tuple[float, str, int, int, str]


@dataclass
class Trace:
    """Time-ordered ``(timestamp_s, event, peer_id, block_id, signature_hex)``
    records; ``block_id`` is -1 when no block is involved and SAMPLE records
    carry peer -1 and the union of all peers' complete blocks."""

    n_blocks: int
    horizon: float
    warmup: float
    records: List[Record] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def write_ndjson(self, path) -> None:
        keys = ("timestamp_s", "event", "peer_id", "block_id", "signature_hex")
        try:
            with open(path, "w", encoding="utf-8") as fh:
                for rec in self.records:
                    fh.write(json.dumps(dict(zip(keys, rec)), separators=(",", ":")))
                    fh.write("\n")
        except OSError as exc:
            raise TraceIOError(path, exc.strerror or str(exc)) from exc

    @classmethod
    def read_ndjson(cls, path, n_blocks: int, horizon: float, warmup: float = 0.0) -> "Trace":
        trace = cls(n_blocks, horizon, warmup)
        try:
            with open(path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    try:
                        d = json.loads(line)
                        rec = (
                            float(d["timestamp_s"]),
                            str(d["event"]),
                            int(d["peer_id"]),
                            int(d["block_id"]),
                            str(d["signature_hex"]),
                        )
                    except (ValueError, KeyError, TypeError) as exc:
                        raise ValidationError(f"{path}:{lineno}: malformed record ({exc})") from exc
                    if rec[1] not in EVENTS:
                        raise ValidationError(f"{path}:{lineno}: unknown event {rec[1]!r}")
                    trace.records.append(rec)
        except OSError as exc:
            raise TraceIOError(path, exc.strerror or str(exc)) from exc
        return trace

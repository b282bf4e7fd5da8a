"""Per-request metrics and a thread-safe collector.

Query handling time covers normalization, planning, execution, and stitching;
page build time is measured by the request handler from receipt of the
request to just before the response is emitted, and is reported both with and
without the query handling share.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field


@dataclass
class MetricsRecord:
    page: str
    query_count: int = 0
    query_time: float = 0.0  # fractional milliseconds
    build_time_excl: float = 0.0
    build_time_incl: float = 0.0

    def validate(self) -> None:
        assert self.query_count >= 0
        assert self.build_time_incl >= self.build_time_excl
        assert self.build_time_incl >= self.query_time

    def to_dict(self) -> dict:
        return {
            "page": self.page,
            "query_count": self.query_count,
            "query_time": self.query_time,
            "build_time_excl": self.build_time_excl,
            "build_time_incl": self.build_time_incl,
        }


class MetricsCollector:
    """Accumulates finished request records; tolerates concurrent appends."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._records: list[MetricsRecord] = []

    def add(self, record: MetricsRecord) -> None:
        with self._lock:
            self._records.append(record)

    def snapshot(self) -> list[MetricsRecord]:
        with self._lock:
            return list(self._records)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict()) + "\n" for r in self.snapshot())

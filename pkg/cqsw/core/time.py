from __future__ import annotations

import time
from dataclasses import dataclass, field
from datetime import datetime, timezone


def utc_stamp(moment: datetime | None = None) -> str:
    """UTC ISO-8601 to the second."""
    moment = moment or datetime.now(timezone.utc)
    return moment.astimezone(timezone.utc).replace(microsecond=0).isoformat()


@dataclass
class RunClock:
    """Wall-clock start of a run plus a monotonic timer for its duration."""

    started: datetime = field(default_factory=lambda: datetime.now(timezone.utc))
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    @property
    def started_at(self) -> str:
        return utc_stamp(self.started)

    def elapsed_seconds(self) -> float:
        return round(time.perf_counter() - self._t0, 3)

from __future__ import annotations

from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar


_T = TypeVar("_T")
_R = TypeVar("_R")


def map_in_order(func: Callable[[_T], _R], items: Iterable[_T], workers: int = 1) -> list[_R]:
    """Apply func to every item; results come back in input order for any worker count."""
    batch = list(items)
    if workers <= 1 or len(batch) <= 1:
        return [func(item) for item in batch]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, batch))


def split_range(total: int, parts: int) -> list[range]:
    parts = max(1, min(parts, total)) if total else 1
    step, extra = divmod(total, parts)
    out: list[range] = []
    start = 0
    for idx in range(parts):
        stop = start + step + (1 if idx < extra else 0)
        out.append(range(start, stop))
        start = stop
    return out

"""In-memory cache for converged PDE solves.

Acceptance criteria and the CLI frequently ask for the same exterior solve
(same body, norm, grid and truncation radii); the cache makes the second
request free. Entries hold full voxel fields, so the store is bounded by
`settings.CACHE_MAX_ENTRIES` and evicts the least recently used solve.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Any, Dict, Hashable, Optional, Sequence

from finslercap.core.config import settings
from finslercap.core.logging_config import get_logger

logger = get_logger(__name__)


@dataclass
class CachedSolve:
    problem: str
    body_key: str
    norm_key: str
    grid: int
    r_out: tuple[float, ...]
    result: Any


class SolveCache:
    """Stores finished solves keyed by problem, body, norm, grid and radii.

    Thread-safe: all access goes through a `threading.Lock`. `max_entries`
    overrides `settings.CACHE_MAX_ENTRIES`; a bound of 0 disables storing.
    """

    def __init__(self, max_entries: int | None = None) -> None:
        self._store: "OrderedDict[str, CachedSolve]" = OrderedDict()
        self._lock = threading.Lock()
        self._max_entries = max_entries

    @property
    def max_entries(self) -> int:
        bound = self._max_entries if self._max_entries is not None else settings.CACHE_MAX_ENTRIES
        return max(int(bound), 0)

    @staticmethod
    def _key(
        problem: str,
        body_key: str,
        norm_key: str,
        grid: int,
        r_out: Sequence[float],
        options: Hashable = None,
    ) -> str:
        radii = ",".join(f"{float(r):.12g}" for r in r_out)
        return f"{problem}:{body_key}:{norm_key}:{grid}:{radii}:{options!r}"

    def set(
        self,
        problem: str,
        body_key: str,
        norm_key: str,
        grid: int,
        r_out: Sequence[float],
        result: Any,
        options: Hashable = None,
    ) -> None:
        """Store a finished solve, evicting the least recently used ones beyond the bound."""
        from finslercap.core.metrics import metrics_collector

        entry = CachedSolve(
            problem=problem,
            body_key=body_key,
            norm_key=norm_key,
            grid=grid,
            r_out=tuple(float(r) for r in r_out),
            result=result,
        )
        key = self._key(problem, body_key, norm_key, grid, r_out, options)
        with self._lock:
            self._store[key] = entry
            self._store.move_to_end(key)
            metrics_collector.cache.record_set()
            while len(self._store) > self.max_entries:
                _, evicted = self._store.popitem(last=False)
                metrics_collector.cache.record_eviction()
                logger.debug(
                    "solve_cache_evicted",
                    problem=evicted.problem,
                    grid=evicted.grid,
                    max_entries=self.max_entries,
                    message="Least recently used solve dropped from the cache",
                )

    def get(
        self,
        problem: str,
        body_key: str,
        norm_key: str,
        grid: int,
        r_out: Sequence[float],
        options: Hashable = None,
    ) -> Optional[CachedSolve]:
        """Return the cached solve or None; a hit marks the entry as recently used."""
        from finslercap.core.metrics import metrics_collector

        key = self._key(problem, body_key, norm_key, grid, r_out, options)
        with self._lock:
            entry = self._store.get(key)
            if entry:
                self._store.move_to_end(key)
                metrics_collector.cache.record_hit()
            else:
                metrics_collector.cache.record_miss()
            return entry

    def clear(self) -> None:
        """Clear all cache entries."""
        with self._lock:
            self._store.clear()

    def get_stats(self) -> dict:
        """Get cache statistics."""
        with self._lock:
            by_problem: Dict[str, int] = {}
            for entry in self._store.values():
                by_problem[entry.problem] = by_problem.get(entry.problem, 0) + 1
            return {
                "total_entries": len(self._store),
                "max_entries": self.max_entries,
                "entries_by_problem": dict(sorted(by_problem.items())),
            }


solve_cache = SolveCache()

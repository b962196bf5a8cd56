"""Test-fold hygiene: every id that enters a training batch is checked."""

from __future__ import annotations

from typing import Iterable

from ..errors import LeakageError


class IdAudit:
    def __init__(self, forbidden: Iterable):
        self.forbidden = frozenset(forbidden)
        self.seen: set = set()
        self.batches = 0

    def check(self, ids: Iterable, phase: str = "train") -> None:
        ids = list(ids)
        leaked = sorted((i for i in ids if i in self.forbidden), key=str)
        if leaked:
            raise LeakageError(f"{phase}: test-fold image id(s) {leaked} reached a training batch")
        self.seen.update(ids)
        self.batches += 1

    def report(self) -> dict:
        return {"batches": self.batches, "distinct_ids": len(self.seen),
                "forbidden": len(self.forbidden), "leaks": 0}

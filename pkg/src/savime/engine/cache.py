"""Reference-counted cache of intermediate subTARs.

Every subTAR an operator emits is put here with a counter equal to the number
of consumer edges of the producing node. Consumers release an entry when they
are done with it; when the counter drops to zero the entry is removed and the
derived datasets it owns are deleted.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Hashable

from ..errors import DoubleRelease, SavimeError
from ..layout import SubTar
from ..storage import DatasetStore

Key = tuple[int, int]  # (producer node id, ordinal within the node's stream)


@dataclass
class CacheEntry:
    key: Key
    subtar: SubTar
    counter: int
    pending: set = field(default_factory=set)


class SubTarCache:
    def __init__(self, store: DatasetStore, instrument: bool = False):
        self.store = store
        self.instrument = instrument
        self._entries: dict[Key, CacheEntry] = {}
        self._lock = threading.Lock()
        self.created: dict[Key, int] = {}
        self.freed: dict[Key, int] = {}
        self.events: list[tuple] = []
        self.peak = 0

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: Key) -> bool:
        return key in self._entries

    @property
    def live_keys(self) -> list[Key]:
        return list(self._entries)

    def put(self, key: Key, subtar: SubTar, consumers: list[Hashable]) -> CacheEntry:
        with self._lock:
            if key in self._entries or key in self.created:
                raise SavimeError(f"subTAR {key} created twice")
            for ds in subtar.datasets():
                self.store.retain(ds)
            entry = CacheEntry(key, subtar, len(consumers), set(consumers))
            self._entries[key] = entry
            self.created[key] = 1
            self.peak = max(self.peak, len(self._entries))
            if self.instrument:
                self.events.append(("create", key, tuple(consumers)))
            if entry.counter == 0:
                self._free(entry)
            return entry

    def get(self, key: Key) -> SubTar:
        return self._entries[key].subtar

    def release(self, consumer: Hashable, key: Key) -> None:
        with self._lock:
            entry = self._entries.get(key)
            if entry is None or consumer not in entry.pending:
                raise DoubleRelease(f"consumer {consumer} released subTAR {key} more than once")
            entry.pending.discard(consumer)
            entry.counter -= 1
            if self.instrument:
                self.events.append(("release", key, consumer))
            if entry.counter == 0:
                self._free(entry)

    def _free(self, entry: CacheEntry) -> None:
        del self._entries[entry.key]
        self.freed[entry.key] = self.freed.get(entry.key, 0) + 1
        if self.instrument:
            self.events.append(("free", entry.key))
        for ds in entry.subtar.datasets():
            self.store.release(ds)

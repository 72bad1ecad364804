"""Dataset storage manager.

Datasets are raw little-endian arrays kept as plain files with no header.
Ingested files are adopted into the storage directory (hard link, rename or a
single raw byte copy) so that ingestion never parses, swaps or reorders
elements. Derived datasets produced while a query runs live in the temporary
directory and are deleted once nothing references them any more.
"""
from __future__ import annotations

import itertools
import logging
import mmap
import os
import shutil
import tempfile
import threading
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadSize,
    DatasetInUse,
    DuplicateDataset,
    LengthMismatch,
    OutOfBounds,
    ResourceExhausted,
    StorageError,
    UnknownDataset,
    Unreadable,
    UnsupportedByteOrder,
)

log = logging.getLogger(__name__)

ELEMENT_TYPES: dict[str, np.dtype] = {
    "int32": np.dtype("<i4"),
    "int64": np.dtype("<i8"),
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
}

INGESTED = "ingested"
DERIVED = "derived"


def dtype_of(element_type: str) -> np.dtype:
    try:
        return ELEMENT_TYPES[element_type]
    except KeyError:
        raise StorageError(
            f"unsupported element type {element_type!r}; expected one of {sorted(ELEMENT_TYPES)}"
        ) from None


def element_type_of(dtype: np.dtype) -> str:
    dtype = np.dtype(dtype).newbyteorder("<") if np.dtype(dtype).byteorder == ">" else np.dtype(dtype)
    for name, dt in ELEMENT_TYPES.items():
        if dt == dtype:
            return name
    raise StorageError(f"no element type for dtype {dtype}")


def is_integer_type(element_type: str) -> bool:
    return element_type.startswith("int")


@dataclass
class StorageConfig:
    storage_dir: Path
    temp_dir: Path
    max_resident_bytes: int = 4 << 30
    prefault: bool = False

    def __post_init__(self) -> None:
        self.storage_dir = Path(self.storage_dir)
        self.temp_dir = Path(self.temp_dir)

    def ensure(self) -> None:
        for d in (self.storage_dir, self.temp_dir):
            d.mkdir(parents=True, exist_ok=True)
            if not os.access(d, os.W_OK):
                raise StorageError(f"directory {d} is not writable")


class Dataset:
    """An immutable contiguous buffer of one primitive element type."""

    _ids = itertools.count()

    def __init__(
        self,
        name: str,
        element_type: str,
        length: int,
        path: Path | None,
        origin: str,
        array: np.ndarray | None = None,
    ):
        self.name = name
        self.element_type = element_type
        self.dtype = dtype_of(element_type)
        self.length = int(length)
        self.path = Path(path) if path is not None else None
        self.origin = origin
        self._array = array
        self.refs = 0
        self.freed = False
        self.uid = next(Dataset._ids)

    def __repr__(self) -> str:
        return f"Dataset({self.name!r}, {self.element_type}, length={self.length}, origin={self.origin})"

    def __len__(self) -> int:
        return self.length

    @property
    def nbytes(self) -> int:
        return self.length * self.dtype.itemsize

    @property
    def array(self) -> np.ndarray:
        """Read-only view of the cells; memory-mapped for file-backed datasets."""
        if self.freed:
            raise StorageError(f"dataset {self.name!r} has been freed")
        if self._array is None:
            if self.length == 0:
                arr = np.empty(0, dtype=self.dtype)
            else:
                arr = np.memmap(self.path, dtype=self.dtype, mode="r", shape=(self.length,))
            arr.flags.writeable = False
            self._array = arr
        return self._array

    def prefault(self) -> None:
        arr = self.array
        mm = getattr(arr, "_mmap", None)
        if mm is not None and hasattr(mm, "madvise"):
            mm.madvise(mmap.MADV_WILLNEED)


class DatasetStore:
    """Registry of named datasets plus the pool of anonymous derived ones.

    ``element_touches`` counts element-level reads/writes performed by the store
    itself; the adoption path of :meth:`create_dataset` never increments it.
    """

    def __init__(self, config: StorageConfig):
        self.config = config
        config.ensure()
        self._datasets: dict[str, Dataset] = {}
        self._lock = threading.RLock()
        self.element_touches = 0
        self.derived_bytes = 0
        self.derived_live = 0
        self.derived_created = 0
        self.derived_freed = 0

    # -- registry -----------------------------------------------------------

    def __contains__(self, name: str) -> bool:
        return name in self._datasets

    def get(self, name: str) -> Dataset:
        try:
            return self._datasets[name]
        except KeyError:
            raise UnknownDataset(f"unknown dataset {name!r}") from None

    def names(self) -> list[str]:
        return sorted(self._datasets)

    def datasets(self) -> list[Dataset]:
        return [self._datasets[n] for n in self.names()]

    def _check_fresh(self, name: str) -> None:
        if name in self._datasets:
            raise DuplicateDataset(f"dataset {name!r} already exists")

    def _stored_path(self, name: str) -> Path:
        return self.config.storage_dir / f"{name}.bin"

    def create_dataset(
        self,
        name: str,
        source: str | os.PathLike,
        element_type: str,
        *,
        mode: str = "link",
        byte_order: str = "little",
    ) -> Dataset:
        """Adopt a raw binary file as a dataset without converting it.

        ``mode`` is ``"link"`` (hard link, falling back to a raw copy across file
        systems), ``"move"`` (rename) or ``"copy"``.
        """
        if byte_order != "little":
            raise UnsupportedByteOrder(f"{byte_order}-endian files are rejected, not converted")
        dtype = dtype_of(element_type)
        src = Path(source)
        try:
            size = src.stat().st_size
        except OSError as exc:
            raise Unreadable(f"cannot stat {src}: {exc}") from exc
        if not os.access(src, os.R_OK):
            raise Unreadable(f"cannot read {src}")
        if size == 0 or size % dtype.itemsize:
            raise BadSize(f"{src} has {size} bytes, not a positive multiple of {dtype.itemsize}")
        with self._lock:
            self._check_fresh(name)
            dest = self._stored_path(name)
            if dest.exists():
                dest.unlink()
            self._adopt(src, dest, mode)
            ds = Dataset(name, element_type, size // dtype.itemsize, dest, INGESTED)
            self._verify_size(ds)
            if self.config.prefault:
                ds.prefault()
            self._datasets[name] = ds
        log.info("dataset %s adopted from %s (%d cells)", name, src, ds.length)
        return ds

    @staticmethod
    def _adopt(src: Path, dest: Path, mode: str) -> None:
        if mode == "move":
            try:
                os.replace(src, dest)
                return
            except OSError:
                shutil.move(src, dest)
                return
        if mode == "link":
            try:
                os.link(src, dest)
                return
            except OSError:
                pass
        elif mode != "copy":
            raise StorageError(f"unknown adoption mode {mode!r}")
        shutil.copyfile(src, dest)

    def _verify_size(self, ds: Dataset) -> None:
        on_disk = ds.path.stat().st_size if ds.path is not None else ds.nbytes
        if on_disk != ds.nbytes:
            raise BadSize(f"dataset {ds.name}: {on_disk} bytes on disk, expected {ds.nbytes}")

    def create_dataset_literal(self, name: str, element_type: str, values: Sequence) -> Dataset:
        values = list(values)
        if not values:
            raise StorageError("literal datasets need at least one value")
        arr = np.asarray(values, dtype=dtype_of(element_type))
        with self._lock:
            self._check_fresh(name)
            return self._write_stored(name, element_type, arr, INGESTED)

    def create_dataset_bytes(self, name: str, element_type: str, payload: bytes) -> Dataset:
        """Register raw bytes received from a client; written once, never parsed."""
        dtype = dtype_of(element_type)
        if len(payload) == 0 or len(payload) % dtype.itemsize:
            raise BadSize(f"{len(payload)} bytes is not a positive multiple of {dtype.itemsize}")
        with self._lock:
            self._check_fresh(name)
            dest = self._stored_path(name)
            with open(dest, "wb") as fh:
                fh.write(payload)
            ds = Dataset(name, element_type, len(payload) // dtype.itemsize, dest, INGESTED)
            self._verify_size(ds)
            self._datasets[name] = ds
            return ds

    def store_array(self, name: str, arr: np.ndarray, origin: str = DERIVED) -> Dataset:
        """Persist an array under a name (used when materializing query results)."""
        element_type = element_type_of(arr.dtype)
        with self._lock:
            self._check_fresh(name)
            return self._write_stored(name, element_type, np.asarray(arr), origin)

    def _write_stored(self, name: str, element_type: str, arr: np.ndarray, origin: str) -> Dataset:
        dest = self._stored_path(name)
        arr = np.ascontiguousarray(arr, dtype=dtype_of(element_type))
        arr.tofile(dest)
        self.element_touches += arr.size
        ds = Dataset(name, element_type, arr.size, dest, origin)
        self._verify_size(ds)
        self._datasets[name] = ds
        return ds

    def register_file(self, name: str, element_type: str, length: int, path: Path, origin: str) -> Dataset:
        """Re-register a dataset file already inside storage (catalog loading)."""
        with self._lock:
            self._check_fresh(name)
            ds = Dataset(name, element_type, length, path, origin)
            self._verify_size(ds)
            self._datasets[name] = ds
            return ds

    def drop(self, name: str, *, in_use: Iterable[str] = ()) -> None:
        with self._lock:
            ds = self.get(name)
            if name in set(in_use):
                raise DatasetInUse(f"dataset {name!r} is still referenced")
            del self._datasets[name]
            ds.freed = True
            ds._array = None
            if ds.path is not None and ds.path.exists():
                ds.path.unlink()

    # -- access -------------------------------------------------------------

    def read_range(self, ds: Dataset, offset: int, count: int) -> np.ndarray:
        if offset < 0 or count < 0 or offset + count > ds.length:
            raise OutOfBounds(f"[{offset}, {offset + count}) outside dataset of length {ds.length}")
        return ds.array[offset:offset + count]

    def filter_dataset(self, ds: Dataset, mask) -> Dataset:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (ds.length,):
            raise LengthMismatch(f"mask of length {mask.size} for dataset of length {ds.length}")
        self.element_touches += ds.length
        return self.create_derived(ds.array[mask], ds.element_type)

    # -- derived datasets -----------------------------------------------------

    def create_derived(self, arr, element_type: str | None = None) -> Dataset:
        arr = np.asarray(arr)
        if element_type is None:
            element_type = element_type_of(arr.dtype)
        arr = np.ascontiguousarray(arr, dtype=dtype_of(element_type))
        with self._lock:
            if self.derived_bytes + arr.nbytes > self.config.max_resident_bytes:
                raise ResourceExhausted(
                    f"temporary dataset budget of {self.config.max_resident_bytes} bytes exceeded"
                )
            fd, path = tempfile.mkstemp(prefix="ds_", suffix=".bin", dir=self.config.temp_dir)
            with os.fdopen(fd, "wb") as fh:
                fh.write(arr.tobytes())
            arr = arr.copy() if arr.base is not None else arr
            arr.flags.writeable = False
            ds = Dataset(f"_tmp_{uuid.uuid4().hex[:12]}", element_type, arr.size, Path(path), DERIVED, arr)
            self.derived_bytes += ds.nbytes
            self.derived_live += 1
            self.derived_created += 1
        return ds

    def retain(self, ds: Dataset) -> None:
        if ds.origin == DERIVED and ds.name not in self._datasets:
            with self._lock:
                ds.refs += 1

    def release(self, ds: Dataset) -> None:
        """Drop one reference to an anonymous derived dataset; delete it at zero."""
        if ds.origin != DERIVED or ds.name in self._datasets:
            return
        with self._lock:
            ds.refs -= 1
            if ds.refs > 0:
                return
            if ds.freed:
                raise StorageError(f"dataset {ds.name} freed twice")
            ds.freed = True
            ds._array = None
            self.derived_bytes -= ds.nbytes
            self.derived_live -= 1
            self.derived_freed += 1
            try:
                if ds.path is not None:
                    ds.path.unlink()
            except FileNotFoundError:
                pass

"""Core data types and binary I/O: heap dumps, snapshots, feature matrices.

All multi-byte reads are little-endian (x86-64 dumps); every other module
assumes this.
"""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

WORD_SIZE = 8
PAGE_SIZE = 4096

KEY_ROLES = ("A", "B", "C", "D", "E", "F")

# Default sidecar field names; pass a different mapping to absorb corpus
# variations (the public corpora do not share one schema).
DEFAULT_FIELD_MAP = {
    "base": "base_addr",
    "key_prefix": "key_",
}

FEATURES_MAGIC = "memkex-features v1"
LABELS_MAGIC = "memkex-labels v1"


class MemkexError(Exception):
    """Base class for all toolkit errors."""


class InputError(MemkexError):
    """Bad user-supplied input: missing files, malformed values, ranges."""


class SidecarError(InputError):
    """Metadata sidecar is missing a field or fails to parse."""


class AlignmentError(InputError):
    """An address violates its required alignment."""


class FormatError(InputError):
    """A serialized artifact has a bad magic/version or is truncated."""


@dataclass(frozen=True)
class KeyRecord:
    """One SSH session key: role letter A-F plus the raw key bytes."""

    role: str
    data: bytes

    def __post_init__(self):
        if self.role not in KEY_ROLES:
            raise InputError(f"unknown key role {self.role!r}, expected one of {KEY_ROLES}")
        if not 12 <= len(self.data) <= 64:
            raise InputError(f"key {self.role}: length {len(self.data)} outside [12, 64]")


@dataclass(frozen=True)
class HeapDump:
    """A contiguous heap region with its virtual address range and any known keys."""

    data: bytes
    base_addr: int
    end_addr: int
    keys: tuple[KeyRecord, ...] = ()
    source_id: str = ""

    def __post_init__(self):
        if self.base_addr % WORD_SIZE != 0:
            raise AlignmentError(f"base address {self.base_addr:#x} is not 8-byte aligned")
        if self.end_addr - self.base_addr != len(self.data):
            raise InputError(
                f"end_addr - base_addr = {self.end_addr - self.base_addr} "
                f"but dump holds {len(self.data)} bytes"
            )

    def __len__(self):
        return len(self.data)

    def read_word(self, offset: int) -> int:
        """Little-endian 64-bit value at byte offset (need not be aligned)."""
        return int.from_bytes(self.data[offset:offset + 8], "little")

    def contains_vaddr(self, vaddr: int) -> bool:
        return self.base_addr <= vaddr < self.end_addr


@dataclass(frozen=True)
class SnapshotImage:
    """Raw physical memory plus the physical address of the top-level page table."""

    data: bytes
    page_table_root: int
    source_id: str = ""

    def __post_init__(self):
        if self.page_table_root % PAGE_SIZE != 0:
            raise AlignmentError(
                f"page table root {self.page_table_root:#x} is not 4096-byte aligned"
            )
        if not 0 <= self.page_table_root < len(self.data):
            raise InputError(
                f"page table root {self.page_table_root:#x} outside image of "
                f"{len(self.data)} bytes"
            )

    def __len__(self):
        return len(self.data)

    def read_word(self, offset: int) -> int:
        return int.from_bytes(self.data[offset:offset + 8], "little")


@dataclass
class FeatureMatrix:
    """Row-per-instance features with per-row (source_id, offset) provenance."""

    values: np.ndarray  # shape (rows, cols), float64
    provenance: list[tuple[str, int]]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InputError("feature values must be a 2-D array")
        if len(self.provenance) != self.values.shape[0]:
            raise InputError(
                f"{len(self.provenance)} provenance entries for {self.values.shape[0]} rows"
            )

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


@dataclass
class LabelVector:
    """Integer labels paired with an ordered list of class names."""

    labels: np.ndarray  # shape (rows,), int64
    class_names: tuple[str, ...]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1:
            raise InputError("labels must be 1-D")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise InputError("label outside class range")

    @property
    def rows(self) -> int:
        return self.labels.size


def words_view(data: bytes) -> np.ndarray:
    """All aligned 64-bit little-endian words; a trailing partial word is dropped."""
    usable = len(data) - len(data) % WORD_SIZE
    return np.frombuffer(data, dtype="<u8", count=usable // WORD_SIZE)


def _parse_int(text: str, what: str) -> int:
    t = text.strip().lower()
    try:
        if t.startswith("0x"):
            return int(t, 16)
        # Hex values are accepted with or without the 0x prefix.
        return int(t, 16)
    except ValueError as exc:
        raise SidecarError(f"cannot parse {what} value {text!r} as hex") from exc


def parse_sidecar(text: str, field_map: dict | None = None) -> tuple[int, tuple[KeyRecord, ...]]:
    """Parse a metadata sidecar into (base address, key records).

    The sidecar is UTF-8 text, one `name value` pair per line, `#` comments.
    Field names come from the mapping table so differing corpora can be
    absorbed without editing the loader.
    """
    fmap = dict(DEFAULT_FIELD_MAP)
    if field_map:
        fmap.update(field_map)
    base_field = fmap["base"]
    key_prefix = fmap["key_prefix"]

    base = None
    keys = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise SidecarError(f"line {lineno}: expected 'name value', got {line!r}")
        name, value = parts
        if name == base_field:
            base = _parse_int(value, base_field)
        elif name.startswith(key_prefix):
            role = name[len(key_prefix):]
            try:
                key_bytes = bytes.fromhex(value.strip().removeprefix("0x"))
            except ValueError as exc:
                raise SidecarError(f"line {lineno}: bad hex key bytes for role {role}") from exc
            keys.append(KeyRecord(role, key_bytes))
    if base is None:
        raise SidecarError(f"sidecar has no {base_field!r} field")
    return base, tuple(keys)


def load_heap_dump(raw_path, meta_path, field_map: dict | None = None) -> HeapDump:
    """Load a raw heap file plus its metadata sidecar."""
    for p in (raw_path, meta_path):
        if not os.path.isfile(p):
            raise InputError(f"no such file: {p}")
    with open(raw_path, "rb") as f:
        data = f.read()
    with open(meta_path, "r", encoding="utf-8") as f:
        base, keys = parse_sidecar(f.read(), field_map)
    if base % WORD_SIZE != 0:
        raise AlignmentError(f"{meta_path}: base address {base:#x} is not 8-byte aligned")
    source_id = os.path.splitext(os.path.basename(str(raw_path)))[0]
    return HeapDump(data, base, base + len(data), keys, source_id)


def save_heap_dump(heap: HeapDump, raw_path, meta_path, field_map: dict | None = None) -> None:
    """Write a heap dump back as raw file + sidecar (round-trip safe)."""
    fmap = dict(DEFAULT_FIELD_MAP)
    if field_map:
        fmap.update(field_map)
    atomic_write_bytes(raw_path, heap.data)
    lines = [f"{fmap['base']} {heap.base_addr:#x}"]
    for key in heap.keys:
        lines.append(f"{fmap['key_prefix']}{key.role} {key.data.hex()}")
    atomic_write_text(meta_path, "\n".join(lines) + "\n")


def load_snapshot(raw_path, page_table_root: int) -> SnapshotImage:
    """Load a flat raw physical memory image (no container formats)."""
    if not os.path.isfile(raw_path):
        raise InputError(f"no such file: {raw_path}")
    with open(raw_path, "rb") as f:
        data = f.read()
    source_id = os.path.splitext(os.path.basename(str(raw_path)))[0]
    return SnapshotImage(data, page_table_root, source_id)


def key_spans(heap: HeapDump) -> list[tuple[int, int]]:
    """All (start, end) byte offsets at which any key occurs in the heap.

    Every occurrence counts, not just the first; labeling treats each one
    as key material.
    """
    spans = []
    for key in heap.keys:
        start = heap.data.find(key.data)
        while start != -1:
            spans.append((start, start + len(key.data)))
            start = heap.data.find(key.data, start + 1)
    spans.sort()
    return spans


# ---------------------------------------------------------------------------
# Feature matrix / label vector on-disk formats

def _format_value(v: float) -> str:
    if v == int(v) and abs(v) < 2 ** 53:
        return str(int(v))
    return repr(float(v))


def save_features(fm: FeatureMatrix, path) -> None:
    """Write the documented text format:

    memkex-features v1 <rows> <cols>
    one row of space-separated decimal values per line
    provenance
    one `source_id offset` line per row
    """
    lines = [f"{FEATURES_MAGIC} {fm.rows} {fm.cols}"]
    for row in fm.values:
        lines.append(" ".join(_format_value(v) for v in row))
    lines.append("provenance")
    for source_id, offset in fm.provenance:
        lines.append(f"{source_id} {offset}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_features(path) -> FeatureMatrix:
    if not os.path.isfile(path):
        raise InputError(f"no such file: {path}")
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].startswith(FEATURES_MAGIC):
        raise FormatError(f"{path}: bad feature-file header")
    try:
        rows, cols = (int(x) for x in lines[0].split()[-2:])
    except ValueError as exc:
        raise FormatError(f"{path}: bad feature-file header") from exc
    if len(lines) < 1 + rows + 1 + rows:
        raise FormatError(f"{path}: truncated feature file")
    values = np.empty((rows, cols), dtype=np.float64)
    for i in range(rows):
        parts = lines[1 + i].split()
        if len(parts) != cols:
            raise FormatError(f"{path}: row {i} has {len(parts)} values, expected {cols}")
        values[i] = [float(p) for p in parts]
    if lines[1 + rows] != "provenance":
        raise FormatError(f"{path}: missing provenance block")
    provenance = []
    for i in range(rows):
        src, off = lines[2 + rows + i].rsplit(" ", 1)
        provenance.append((src, int(off)))
    return FeatureMatrix(values, provenance)


def save_labels(lv: LabelVector, path) -> None:
    lines = [f"{LABELS_MAGIC} {lv.rows} {len(lv.class_names)}"]
    lines.extend(lv.class_names)
    lines.extend(str(int(v)) for v in lv.labels)
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_labels(path) -> LabelVector:
    if not os.path.isfile(path):
        raise InputError(f"no such file: {path}")
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].startswith(LABELS_MAGIC):
        raise FormatError(f"{path}: bad label-file header")
    try:
        rows, nclasses = (int(x) for x in lines[0].split()[-2:])
    except ValueError as exc:
        raise FormatError(f"{path}: bad label-file header") from exc
    if len(lines) < 1 + nclasses + rows:
        raise FormatError(f"{path}: truncated label file")
    class_names = tuple(lines[1:1 + nclasses])
    labels = np.array([int(x) for x in lines[1 + nclasses:1 + nclasses + rows]], dtype=np.int64)
    return LabelVector(labels, class_names)


# ---------------------------------------------------------------------------
# Atomic file output (temp file + rename in the target directory)

def atomic_write_bytes(path, data: bytes) -> None:
    path = str(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".memkex-tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))

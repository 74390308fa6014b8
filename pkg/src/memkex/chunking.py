"""Fixed-size slicing and the SlicedKex / MetaKex / HeaderKex feature rows.

Chunks are 128 bytes (twice the largest 64-byte key) so that a 64-byte
sliding stride guarantees every key is fully contained in some window.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import FeatureMatrix, HeapDump, InputError, LabelVector, key_spans
from .scan import find_valid_pointers, structure_size

CHUNK_SIZE = 128
CHUNK_STRIDE = 64
WORDS_PER_CHUNK = CHUNK_SIZE // 8

METAKEX_LEN = CHUNK_SIZE + WORDS_PER_CHUNK * 3   # 176
HEADERKEX_LEN = 8 + CHUNK_SIZE                   # 136

DEFAULT_ENTROPY_THRESHOLD = 5.0  # bits/byte; text ~4.3, key material ~6.9

BINARY_CLASSES = ("no_key", "key")


@dataclass(frozen=True)
class Chunk:
    offset: int
    data: bytes
    label: int

    def __post_init__(self):
        if len(self.data) != CHUNK_SIZE:
            raise InputError(f"chunk must be exactly {CHUNK_SIZE} bytes, got {len(self.data)}")


def _label_for_window(spans, start: int, end: int) -> int:
    """1 iff some key span is fully contained in [start, end)."""
    return int(any(start <= s and e <= end for s, e in spans))


def sliced_chunks(heap: HeapDump) -> list[Chunk]:
    """128-byte windows at 64-byte stride; all-zero windows are discarded."""
    if len(heap) < CHUNK_SIZE:
        raise InputError(f"heap of {len(heap)} bytes is shorter than one {CHUNK_SIZE}-byte chunk")
    spans = key_spans(heap)
    arr = np.frombuffer(heap.data, dtype=np.uint8)
    out = []
    for off in range(0, len(heap) - CHUNK_SIZE + 1, CHUNK_STRIDE):
        if not arr[off:off + CHUNK_SIZE].any():
            continue
        out.append(Chunk(off, heap.data[off:off + CHUNK_SIZE],
                         _label_for_window(spans, off, off + CHUNK_SIZE)))
    return out


def byte_entropy(data: bytes) -> float:
    """Empirical Shannon entropy of the byte distribution, in bits per byte."""
    if not data:
        return 0.0
    counts = np.bincount(np.frombuffer(data, dtype=np.uint8), minlength=256)
    p = counts[counts > 0] / len(data)
    return float(-(p * np.log2(p)).sum())


def entropy_prefilter(chunks: list[Chunk], threshold: float = DEFAULT_ENTROPY_THRESHOLD) -> list[Chunk]:
    """Keep chunks whose byte entropy is at least the threshold (pure selection)."""
    if not 0.0 <= threshold <= 8.0:
        raise InputError(f"entropy threshold {threshold} outside [0, 8]")
    return [c for c in chunks if byte_entropy(c.data) >= threshold]


def structure_aligned_chunks(heap: HeapDump) -> list[Chunk]:
    """One chunk per valid-pointer target, starting at the structure's first byte.

    Targets within 128 bytes of the heap end are zero-padded. Multiple
    pointers to the same target yield a single chunk.
    """
    spans = key_spans(heap)
    targets = sorted({c.value for c in find_valid_pointers(heap)})
    out = []
    for vaddr in targets:
        off = vaddr - heap.base_addr
        data = heap.data[off:off + CHUNK_SIZE]
        if len(data) < CHUNK_SIZE:
            data = data + bytes(CHUNK_SIZE - len(data))
        out.append(Chunk(off, data, _label_for_window(spans, off, off + CHUNK_SIZE)))
    return out


def metakex_features(chunk: Chunk) -> np.ndarray:
    """128 raw bytes followed by (sum, nonzero count, printable count) per word."""
    raw = np.frombuffer(chunk.data, dtype=np.uint8)
    words = raw.reshape(WORDS_PER_CHUNK, 8)
    sums = words.sum(axis=1, dtype=np.int64)
    nonzero = (words != 0).sum(axis=1)
    printable = ((words >= 0x20) & (words <= 0x7E)).sum(axis=1)
    engineered = np.column_stack([sums, nonzero, printable]).reshape(-1)
    return np.concatenate([raw.astype(np.float64), engineered.astype(np.float64)])


def headerkex_features(heap: HeapDump, chunk: Chunk) -> np.ndarray:
    """The 8 bytes preceding the chunk, then the 128 chunk bytes."""
    if chunk.offset < 8:
        raise InputError(f"chunk at offset {chunk.offset} has no preceding header bytes")
    header = np.frombuffer(heap.data[chunk.offset - 8:chunk.offset], dtype=np.uint8)
    raw = np.frombuffer(chunk.data, dtype=np.uint8)
    return np.concatenate([header, raw]).astype(np.float64)


def _chunks_for_method(heap: HeapDump, method: str) -> list[Chunk]:
    if method == "sliced":
        return sliced_chunks(heap)
    if method in ("meta", "header"):
        # MetaKex/HeaderKex run on the reduced key-at-start pipeline.
        chunks = structure_aligned_chunks(heap)
        if method == "header":
            chunks = [c for c in chunks if c.offset >= 8]
        return chunks
    raise InputError(f"unknown chunk featurization method {method!r}")


def chunk_dataset(heaps, method: str, labeled: bool = True,
                  entropy_threshold: float | None = None):
    """Featurize a list of heaps; returns (FeatureMatrix, LabelVector or None).

    Rows are ordered by (source_id position in input, offset). Labeled mode
    refuses heaps with no known keys rather than emitting all-negative rows.
    """
    rows = []
    provenance = []
    labels = []
    for heap in heaps:
        if labeled and not heap.keys:
            raise InputError(
                f"heap {heap.source_id!r} has no key metadata; cannot produce training labels"
            )
        chunks = _chunks_for_method(heap, method)
        if entropy_threshold is not None:
            chunks = entropy_prefilter(chunks, entropy_threshold)
        for chunk in chunks:
            if method == "sliced":
                rows.append(np.frombuffer(chunk.data, dtype=np.uint8).astype(np.float64))
            elif method == "meta":
                rows.append(metakex_features(chunk))
            else:
                rows.append(headerkex_features(heap, chunk))
            provenance.append((heap.source_id, chunk.offset))
            labels.append(chunk.label)
    ncols = {"sliced": CHUNK_SIZE, "meta": METAKEX_LEN, "header": HEADERKEX_LEN}[method]
    values = np.vstack(rows) if rows else np.empty((0, ncols))
    fm = FeatureMatrix(values, provenance)
    if not labeled:
        return fm, None
    return fm, LabelVector(np.array(labels, dtype=np.int64), BINARY_CLASSES)

"""Pointer scanning: heap pointer candidates, malloc headers, kernel pointers.

A pointer candidate is any 8-byte aligned word whose value lands inside the
heap's address range (inclusive upper bound). A valid pointer additionally
targets a structure whose malloc header decodes to a nonzero size that fits
inside the heap.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import WORD_SIZE, HeapDump, InputError, SnapshotImage, words_view

# Low three bits of a malloc size field are flags, not size.
MALLOC_FLAG_MASK = 0x7
PREV_IN_USE = 0x1
IS_MMAPPED = 0x2
NON_MAIN_ARENA = 0x4

# A canonical kernel address has bits 63:47 all set.
KERNEL_TAG = 0x1FFFF


class PointerCandidate(NamedTuple):
    offset: int  # byte offset within the dump, 8-aligned
    value: int   # 64-bit virtual address stored there


class KernelPointerCandidate(NamedTuple):
    phys_offset: int
    vaddr: int


@dataclass(frozen=True)
class MallocHeader:
    raw_size_field: int
    usable_size: int
    prev_in_use: bool
    is_mmapped: bool
    non_main_arena: bool


def find_pointer_candidates(heap: HeapDump) -> list[PointerCandidate]:
    """All aligned words v with base_addr <= v <= end_addr, ascending offset.

    Words overlapping the dump tail (fewer than 8 bytes left) are skipped.
    """
    words = words_view(heap.data)
    if words.size == 0:
        return []
    mask = (words >= heap.base_addr) & (words <= heap.end_addr)
    idx = np.nonzero(mask)[0]
    return [PointerCandidate(int(i) * WORD_SIZE, int(words[i])) for i in idx]


def decode_malloc_header(heap: HeapDump, structure_vaddr: int) -> MallocHeader:
    """Decode the 8-byte size field immediately preceding a structure."""
    header_off = structure_vaddr - WORD_SIZE - heap.base_addr
    if header_off < 0 or header_off + WORD_SIZE > len(heap):
        raise InputError(
            f"structure at {structure_vaddr:#x} has no room for a malloc header in the heap"
        )
    raw = heap.read_word(header_off)
    return MallocHeader(
        raw_size_field=raw,
        usable_size=raw & ~MALLOC_FLAG_MASK,
        prev_in_use=bool(raw & PREV_IN_USE),
        is_mmapped=bool(raw & IS_MMAPPED),
        non_main_arena=bool(raw & NON_MAIN_ARENA),
    )


def is_valid_pointer(heap: HeapDump, candidate: PointerCandidate) -> bool:
    """True iff the candidate targets a structure with nonzero in-heap size.

    end_addr is treated as exclusive here: a pointer one past the end
    references no structure even though it satisfies candidacy.
    """
    v = candidate.value
    if v - WORD_SIZE < heap.base_addr or v >= heap.end_addr:
        return False
    raw = heap.read_word(v - WORD_SIZE - heap.base_addr)
    usable = raw & ~MALLOC_FLAG_MASK
    return usable > 0 and v + usable <= heap.end_addr


def find_valid_pointers(heap: HeapDump) -> list[PointerCandidate]:
    """Pointer candidates that pass is_valid_pointer, ascending offset."""
    return [c for c in find_pointer_candidates(heap) if is_valid_pointer(heap, c)]


def structure_size(heap: HeapDump, structure_vaddr: int) -> int:
    """Usable allocation size for a structure address, 0 if undecodable."""
    if structure_vaddr - WORD_SIZE < heap.base_addr or structure_vaddr >= heap.end_addr:
        return 0
    raw = heap.read_word(structure_vaddr - WORD_SIZE - heap.base_addr)
    return raw & ~MALLOC_FLAG_MASK


def is_kernel_vaddr(vaddr: int) -> bool:
    return (vaddr >> 47) == KERNEL_TAG


def find_kernel_pointer_candidates(snapshot: SnapshotImage) -> list[KernelPointerCandidate]:
    """All aligned words in canonical kernel form (bits 63:47 set), ascending."""
    words = words_view(snapshot.data)
    if words.size == 0:
        return []
    mask = (words >> np.uint64(47)) == np.uint64(KERNEL_TAG)
    idx = np.nonzero(mask)[0]
    return [KernelPointerCandidate(int(i) * WORD_SIZE, int(words[i])) for i in idx]

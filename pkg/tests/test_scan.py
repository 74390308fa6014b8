import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memkex import core, scan

BASE = 0x555555550000


def make_heap(data, base=BASE):
    return core.HeapDump(bytes(data), base, base + len(data), (), "t")


def brute_force_candidates(heap):
    """Independent oracle: test the range predicate at every aligned offset."""
    out = []
    for off in range(0, len(heap) - 7, 8):
        v = struct.unpack_from("<Q", heap.data, off)[0]
        if heap.base_addr <= v <= heap.end_addr:
            out.append((off, v))
    return out


def test_in_range_word_is_candidate():
    data = bytearray(64)
    struct.pack_into("<Q", data, 0, 0x555555550010)
    cands = scan.find_pointer_candidates(make_heap(data))
    assert scan.PointerCandidate(0, 0x555555550010) in cands


def test_far_word_is_not_candidate():
    data = struct.pack("<Q", 0x4141414141414141) + bytes(56)
    assert scan.find_pointer_candidates(make_heap(data)) == []


def test_candidates_match_brute_force_on_random_heap():
    rng = np.random.default_rng(42)
    heap = make_heap(rng.bytes(65536))
    got = [(c.offset, c.value) for c in scan.find_pointer_candidates(heap)]
    assert got == brute_force_candidates(heap)


def test_trailing_partial_word_skipped():
    data = bytes(struct.pack("<Q", BASE + 8)) + b"\x01\x02\x03"
    heap = core.HeapDump(bytes(data), BASE, BASE + len(data), (), "t")
    cands = scan.find_pointer_candidates(heap)
    assert [c.offset for c in cands] == [0]


def test_empty_heap_yields_empty_list():
    assert scan.find_pointer_candidates(make_heap(b"")) == []


def test_decode_malloc_header_flags():
    data = struct.pack("<Q", 0x91) + bytes(144)
    heap = make_heap(data)
    hdr = scan.decode_malloc_header(heap, BASE + 8)
    assert hdr.usable_size == 0x90
    assert hdr.prev_in_use
    assert not hdr.is_mmapped
    assert not hdr.non_main_arena


def test_decode_malloc_header_zero():
    heap = make_heap(bytes(32))
    hdr = scan.decode_malloc_header(heap, BASE + 8)
    assert hdr.usable_size == 0
    assert not (hdr.prev_in_use or hdr.is_mmapped or hdr.non_main_arena)


def test_decode_malloc_header_at_heap_start_errors():
    heap = make_heap(bytes(32))
    with pytest.raises(core.InputError):
        scan.decode_malloc_header(heap, BASE)


@given(st.integers(min_value=0, max_value=2 ** 40))
def test_usable_size_invariant_to_flag_bits(raw):
    data = struct.pack("<Q", raw) + bytes(8)
    heap = make_heap(data)
    plain = scan.decode_malloc_header(heap, BASE + 8).usable_size
    data2 = struct.pack("<Q", raw | 0x7) + bytes(8)
    flagged = scan.decode_malloc_header(make_heap(data2), BASE + 8).usable_size
    assert plain == flagged == (raw & ~0x7)


def test_valid_pointer_nonzero_size():
    data = bytearray(64)
    struct.pack_into("<Q", data, 8, 0x21)  # header for structure at +16
    struct.pack_into("<Q", data, 24, BASE + 16)  # pointer to it
    heap = make_heap(data)
    cand = scan.PointerCandidate(24, BASE + 16)
    assert scan.is_valid_pointer(heap, cand)


def test_invalid_pointer_zero_size():
    data = bytearray(64)
    struct.pack_into("<Q", data, 24, BASE + 16)  # header at +8 stays zero
    heap = make_heap(data)
    assert not scan.is_valid_pointer(heap, scan.PointerCandidate(24, BASE + 16))


def test_invalid_pointer_overruns_heap_end():
    data = bytearray(64)
    # header declares 0x100 bytes but only 48 remain after the structure
    struct.pack_into("<Q", data, 8, 0x101)
    heap = make_heap(data)
    assert not scan.is_valid_pointer(heap, scan.PointerCandidate(0, BASE + 16))


def test_validity_implies_candidacy():
    rng = np.random.default_rng(3)
    heap = make_heap(rng.bytes(16384))
    cands = {(c.offset, c.value) for c in scan.find_pointer_candidates(heap)}
    for c in scan.find_valid_pointers(heap):
        assert (c.offset, c.value) in cands


@settings(max_examples=25)
@given(st.integers(min_value=0, max_value=200))
def test_candidates_equal_oracle_on_seeded_heaps(seed):
    rng = np.random.default_rng(seed)
    heap = make_heap(rng.bytes(4096))
    got = [(c.offset, c.value) for c in scan.find_pointer_candidates(heap)]
    assert got == brute_force_candidates(heap)


def test_kernel_candidate_accept_reject():
    words = [0xFFFF888000001000, 0x00007FFFFFFFF000, 0xFFFF000000000000]
    data = b"".join(struct.pack("<Q", w) for w in words)
    snap = core.SnapshotImage(data + bytes(4096 - len(data)), 0, "t")
    cands = scan.find_kernel_pointer_candidates(snap)
    assert [(c.phys_offset, c.vaddr) for c in cands] == [(0, 0xFFFF888000001000)]


def test_kernel_predicate_equivalence():
    rng = np.random.default_rng(9)
    snap = core.SnapshotImage(rng.bytes(8192) + b"\xff" * 4096, 0, "t")
    got = {(c.phys_offset, c.vaddr) for c in scan.find_kernel_pointer_candidates(snap)}
    expected = set()
    for off in range(0, len(snap) - 7, 8):
        v = struct.unpack_from("<Q", snap.data, off)[0]
        if (v >> 47) == 0x1FFFF:
            expected.add((off, v))
    assert got == expected

import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memkex import chunking, core

BASE = 0x555555550000


def make_heap(data, keys=()):
    return core.HeapDump(bytes(data), BASE, BASE + len(data), tuple(keys), "t")


def test_window_offsets_before_zero_filter():
    rng = np.random.default_rng(0)
    heap = make_heap(rng.bytes(512))
    offsets = [c.offset for c in chunking.sliced_chunks(heap)]
    assert offsets == [0, 64, 128, 192, 256, 320, 384]


def test_all_zero_heap_yields_no_chunks():
    heap = make_heap(bytes(1024))
    assert chunking.sliced_chunks(heap) == []


def test_heap_shorter_than_window_errors():
    with pytest.raises(core.InputError):
        chunking.sliced_chunks(make_heap(bytes(64)))


def test_key_fully_contained_in_some_window():
    rng = np.random.default_rng(5)
    key = rng.bytes(64)
    for k in range(0, 4096 - 64, 37):
        data = bytearray(rng.bytes(4096))
        data[k:k + 64] = key
        heap = make_heap(bytes(data), keys=[core.KeyRecord("F", key)])
        assert any(c.label == 1 for c in chunking.sliced_chunks(heap))


def test_exhaustive_coverage_property():
    # every 64-byte substring placement in a 4 KiB heap is fully contained
    # in at least one 128-byte window at 64-byte stride
    for k in range(0, 4096 - 64 + 1):
        start = (k // 64) * 64
        if start + 128 > 4096:
            start -= 64
        assert start <= k and k + 64 <= start + 128


def test_partial_overlap_is_negative():
    rng = np.random.default_rng(6)
    key = rng.bytes(64)
    data = bytearray(rng.bytes(512))
    data[96:160] = key  # spans windows [64,192) fully, [0,128)/[128,256) partially
    heap = make_heap(bytes(data), keys=[core.KeyRecord("E", key)])
    labels = {c.offset: c.label for c in chunking.sliced_chunks(heap)}
    assert labels[64] == 1
    assert labels[0] == 0
    assert labels[128] == 0


def test_entropy_degenerate_and_random():
    assert chunking.byte_entropy(b"\x41" * 128) == 0.0
    rng = np.random.default_rng(7)
    ents = [chunking.byte_entropy(rng.bytes(128)) for _ in range(1000)]
    mean = float(np.mean(ents))
    # 128 draws from 256 symbols: expected entropy sits a bit below log2(128)
    assert 6.4 <= mean <= 6.7
    assert all(e >= 5.0 for e in ents)


def test_entropy_prefilter():
    rng = np.random.default_rng(8)
    low = chunking.Chunk(0, b"\x41" * 128, 0)
    high = chunking.Chunk(64, rng.bytes(128), 1)
    kept = chunking.entropy_prefilter([low, high], 5.0)
    assert kept == [high]
    assert chunking.entropy_prefilter([low, high], 0.0) == [low, high]
    with pytest.raises(core.InputError):
        chunking.entropy_prefilter([low], 9.0)


def test_structure_aligned_chunk_starts_at_structure():
    data = bytearray(512)
    struct.pack_into("<Q", data, 56, 0x31)        # header: structure at +64, size 0x30
    struct.pack_into("<Q", data, 0, BASE + 64)    # valid pointer to it
    data[64:112] = bytes(range(48))
    heap = make_heap(bytes(data))
    chunks = chunking.structure_aligned_chunks(heap)
    assert [c.offset for c in chunks] == [64]
    assert chunks[0].data[:48] == bytes(range(48))


def test_structure_aligned_zero_pads_at_heap_end():
    data = bytearray(256)
    struct.pack_into("<Q", data, 184, 0x41)       # structure at 192, size 0x40
    struct.pack_into("<Q", data, 0, BASE + 192)
    data[192:256] = b"\xAB" * 64
    heap = make_heap(bytes(data))
    chunks = chunking.structure_aligned_chunks(heap)
    assert chunks[0].offset == 192
    assert chunks[0].data == b"\xAB" * 64 + bytes(64)


def test_no_valid_pointers_no_chunks():
    rng = np.random.default_rng(9)
    heap = make_heap(bytes(4096))
    assert chunking.structure_aligned_chunks(heap) == []


def test_metakex_row_length_and_word_features():
    chunk = chunking.Chunk(0, b"\x41" * 8 + bytes(8) + bytes(112), 0)
    row = chunking.metakex_features(chunk)
    assert row.shape == (176,)
    assert np.array_equal(row[:128], np.frombuffer(chunk.data, dtype=np.uint8))
    # word 0: eight 0x41 bytes
    assert tuple(row[128:131]) == (520, 8, 8)
    # word 1: all zero
    assert tuple(row[131:134]) == (0, 0, 0)


@settings(max_examples=50)
@given(st.binary(min_size=128, max_size=128))
def test_metakex_word_feature_bounds(data):
    row = chunking.metakex_features(chunking.Chunk(0, data, 0))
    words = row[128:].reshape(16, 3)
    for s, nz, pr in words:
        assert pr <= nz <= 8
        assert 0 <= s <= 2040


def test_headerkex_row():
    data = bytes(range(256)) * 2
    heap = make_heap(data)
    chunk = chunking.Chunk(0x40, data[0x40:0xC0], 0)
    row = chunking.headerkex_features(heap, chunk)
    assert row.shape == (136,)
    assert np.array_equal(row[:8], np.arange(0x38, 0x40))
    assert np.array_equal(row[8:], np.frombuffer(chunk.data, dtype=np.uint8))


def test_headerkex_chunk_at_offset_zero_errors():
    heap = make_heap(bytes(256))
    chunk = chunking.Chunk(0, bytes(128), 0)
    with pytest.raises(core.InputError):
        chunking.headerkex_features(heap, chunk)


def test_prefilter_preserves_bytes_and_labels():
    rng = np.random.default_rng(10)
    chunks = [chunking.Chunk(i * 64, rng.bytes(128), i % 2) for i in range(20)]
    kept = chunking.entropy_prefilter(chunks, 5.0)
    assert all(c in chunks for c in kept)


def test_chunk_dataset_refuses_unlabeled_heap():
    rng = np.random.default_rng(11)
    heap = make_heap(rng.bytes(1024))
    with pytest.raises(core.InputError, match="no key metadata"):
        chunking.chunk_dataset([heap], "sliced")
    fm, lv = chunking.chunk_dataset([heap], "sliced", labeled=False)
    assert lv is None
    assert fm.cols == 128


def test_chunk_dataset_column_contracts(synth_heap):
    heap, _ = synth_heap
    for method, cols in (("sliced", 128), ("meta", 176), ("header", 136)):
        fm, lv = chunking.chunk_dataset([heap], method)
        assert fm.cols == cols
        assert fm.rows == lv.rows
        assert fm.rows > 0

import numpy as np
import pytest
from hypothesis import given, strategies as st

from memkex import core


BASE = 0x555555550000


def make_heap(data, base=BASE, keys=()):
    return core.HeapDump(bytes(data), base, base + len(data), tuple(keys), "t")


def test_load_heap_dump_length_arithmetic(tmp_path):
    raw = tmp_path / "d.raw"
    meta = tmp_path / "d.meta"
    raw.write_bytes(bytes(65536))
    meta.write_text("base_addr 0x555555550000\n")
    heap = core.load_heap_dump(raw, meta)
    assert heap.base_addr == 0x555555550000
    assert heap.end_addr == 0x555555560000


def test_load_heap_dump_key_metadata(tmp_path):
    raw = tmp_path / "d.raw"
    meta = tmp_path / "d.meta"
    key = bytes(range(24))
    raw.write_bytes(bytes(128) + key + bytes(128))
    meta.write_text(f"base_addr 555555550000\nkey_C {key.hex()}\n")
    heap = core.load_heap_dump(raw, meta)
    assert len(heap.keys) == 1
    assert heap.keys[0].role == "C"
    assert len(heap.keys[0].data) == 24


def test_load_heap_dump_misaligned_base(tmp_path):
    raw = tmp_path / "d.raw"
    meta = tmp_path / "d.meta"
    raw.write_bytes(bytes(64))
    meta.write_text("base_addr 0x555555550003\n")
    with pytest.raises(core.AlignmentError):
        core.load_heap_dump(raw, meta)


def test_load_heap_dump_missing_file(tmp_path):
    with pytest.raises(core.InputError, match="no such file"):
        core.load_heap_dump(tmp_path / "nope.raw", tmp_path / "nope.meta")


def test_load_heap_dump_malformed_metadata(tmp_path):
    raw = tmp_path / "d.raw"
    meta = tmp_path / "d.meta"
    raw.write_bytes(bytes(64))
    meta.write_text("this is not a sidecar at all\n")
    with pytest.raises(core.SidecarError):
        core.load_heap_dump(raw, meta)


def test_sidecar_field_mapping():
    base, keys = core.parse_sidecar("heap_start 0x1000\nK_A " + "ab" * 16,
                                    field_map={"base": "heap_start", "key_prefix": "K_"})
    assert base == 0x1000
    assert keys[0].role == "A"


def test_save_load_round_trip_is_byte_identical(tmp_path):
    rng = np.random.default_rng(1)
    key = rng.bytes(32)
    data = rng.bytes(4096 - 32) + key
    heap = make_heap(data, keys=[core.KeyRecord("D", key)])
    core.save_heap_dump(heap, tmp_path / "h.raw", tmp_path / "h.meta")
    back = core.load_heap_dump(tmp_path / "h.raw", tmp_path / "h.meta")
    assert back.data == heap.data
    assert back.base_addr == heap.base_addr
    assert back.keys == heap.keys


def test_load_snapshot(tmp_path):
    raw = tmp_path / "s.raw"
    raw.write_bytes(bytes(16 << 20))
    snap = core.load_snapshot(raw, 0x1000)
    assert snap.page_table_root == 0x1000


def test_load_snapshot_misaligned_root(tmp_path):
    raw = tmp_path / "s.raw"
    raw.write_bytes(bytes(8192))
    with pytest.raises(core.AlignmentError):
        core.load_snapshot(raw, 0x1008)


def test_load_snapshot_root_out_of_range(tmp_path):
    raw = tmp_path / "s.raw"
    raw.write_bytes(bytes(8192))
    with pytest.raises(core.InputError):
        core.load_snapshot(raw, 0x10000)


@given(st.binary(min_size=8, max_size=256))
def test_word_read_matches_scalar_reference(data):
    usable = len(data) - len(data) % 8
    words = core.words_view(data)
    for i in range(usable // 8):
        expected = sum(data[8 * i + j] << (8 * j) for j in range(8))
        assert int(words[i]) == expected


def test_key_spans_finds_every_occurrence():
    key = b"\xAA" * 12
    data = bytes(16) + key + bytes(16) + key + bytes(8)
    heap = make_heap(data, keys=[core.KeyRecord("A", key)])
    assert core.key_spans(heap) == [(16, 28), (44, 56)]


def test_feature_matrix_round_trip(tmp_path):
    values = np.array([[1.0, 2.5, -1.0], [0.0, 1e-9, 3.0]])
    fm = core.FeatureMatrix(values, [("a", 0), ("b", 128)])
    core.save_features(fm, tmp_path / "f.txt")
    with open(tmp_path / "f.txt") as f:
        assert f.readline().startswith("memkex-features v1 2 3")
    back = core.load_features(tmp_path / "f.txt")
    assert np.array_equal(back.values, values)
    assert back.provenance == fm.provenance


def test_feature_matrix_truncated_file(tmp_path):
    path = tmp_path / "f.txt"
    path.write_text("memkex-features v1 5 3\n1 2 3\n")
    with pytest.raises(core.FormatError):
        core.load_features(path)


def test_label_vector_round_trip(tmp_path):
    lv = core.LabelVector(np.array([0, 1, 1, 0]), ("no_key", "key"))
    core.save_labels(lv, tmp_path / "l.txt")
    back = core.load_labels(tmp_path / "l.txt")
    assert np.array_equal(back.labels, lv.labels)
    assert back.class_names == lv.class_names


def test_label_out_of_range_rejected():
    with pytest.raises(core.InputError):
        core.LabelVector(np.array([0, 2]), ("a", "b"))


def test_heap_dump_invariants():
    with pytest.raises(core.AlignmentError):
        core.HeapDump(bytes(16), BASE + 3, BASE + 19)
    with pytest.raises(core.InputError):
        core.HeapDump(bytes(16), BASE, BASE + 24)


def test_key_record_validation():
    with pytest.raises(core.InputError):
        core.KeyRecord("G", bytes(16))
    with pytest.raises(core.InputError):
        core.KeyRecord("A", bytes(4))

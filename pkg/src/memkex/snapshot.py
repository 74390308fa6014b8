"""Physical-memory analysis: 4-level translation, linked-list features, and
the two-stage pointer classification pipeline.

Translation walks the x86-64 4-level tables (9-bit indices from bits 47:39
down to 20:12, 12-bit page offset) and honors 1 GiB / 2 MiB large-page bits.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .core import FeatureMatrix, InputError, LabelVector, SnapshotImage, atomic_write_text
from .scan import KernelPointerCandidate, find_kernel_pointer_candidates, is_kernel_vaddr
from . import forest as _forest

PAGE_4K = 4096
PAGE_2M = 2 << 20
PAGE_1G = 1 << 30

ENTRY_PRESENT = 0x1
ENTRY_PAGE_SIZE = 0x80
ENTRY_FRAME_MASK = 0x000FFFFFFFFFF000

DEFAULT_TRAVERSAL_CAP = 4096
DEFAULT_LINK_OFFSET = 0     # intrusive-list convention: next pointer first
RAW_WINDOW = 128            # raw-context bytes mirroring the heap chunk size

SNAPSHOT_FEATURE_LEN = RAW_WINDOW + 4

NOT_OF_INTEREST = None

BINARY_CLASSES = ("not_of_interest", "of_interest")


@dataclass(frozen=True)
class TranslationResult:
    phys_addr: int
    page_size: int


@dataclass(frozen=True)
class ListFeatures:
    distance: int
    count: int
    size: int
    incount: int = 0
    start_translated: bool = True


def _is_canonical(vaddr: int) -> bool:
    top = vaddr >> 47
    return top == 0 or top == 0x1FFFF


def translate(snapshot: SnapshotImage, vaddr: int) -> TranslationResult | None:
    """Virtual to physical; None when any level is absent or out of the image."""
    if not _is_canonical(vaddr):
        return None
    table = snapshot.page_table_root
    for level in range(4):
        shift = 39 - 9 * level
        index = (vaddr >> shift) & 0x1FF
        entry_off = table + index * 8
        if entry_off + 8 > len(snapshot):
            return None
        entry = snapshot.read_word(entry_off)
        if not entry & ENTRY_PRESENT:
            return None
        if entry & ENTRY_PAGE_SIZE and level in (1, 2):
            page_size = PAGE_1G if level == 1 else PAGE_2M
            frame = entry & ENTRY_FRAME_MASK & ~(page_size - 1)
            phys = frame | (vaddr & (page_size - 1))
            if phys >= len(snapshot):
                return None
            return TranslationResult(phys, page_size)
        table = entry & ENTRY_FRAME_MASK
    phys = table | (vaddr & (PAGE_4K - 1))
    if phys >= len(snapshot):
        return None
    return TranslationResult(phys, PAGE_4K)


def list_features(snapshot: SnapshotImage, vaddr: int,
                  cap: int = DEFAULT_TRAVERSAL_CAP,
                  link_offset: int = DEFAULT_LINK_OFFSET) -> ListFeatures:
    """Follow next links from vaddr until a dead end, a cycle, or the cap.

    distance = link reads performed, count = distinct elements visited,
    size = minimum absolute gap between consecutive elements' virtual
    addresses (0 with fewer than 2 elements). An untranslatable start yields
    all-zero features with start_translated=False.
    """
    if cap < 1:
        raise InputError("traversal cap must be >= 1")
    visited: set[int] = set()
    order: list[int] = []
    distance = 0
    cur = vaddr
    while distance < cap:
        t = translate(snapshot, cur + link_offset)
        if t is None:
            if not order:
                return ListFeatures(0, 0, 0, start_translated=False)
            break
        if t.phys_addr + 8 > len(snapshot):
            break
        visited.add(cur)
        order.append(cur)
        nxt = snapshot.read_word(t.phys_addr)
        distance += 1
        if nxt == 0 or nxt == vaddr or nxt in visited or not _is_canonical(nxt):
            break
        cur = nxt
    size = 0
    if len(order) >= 2:
        size = min(abs(b - a) for a, b in zip(order, order[1:]))
    return ListFeatures(distance, len(order), size)


def incount_map(snapshot: SnapshotImage) -> dict[int, int]:
    """Histogram of kernel pointer candidate values over the whole image."""
    counts: dict[int, int] = {}
    for cand in find_kernel_pointer_candidates(snapshot):
        counts[cand.vaddr] = counts.get(cand.vaddr, 0) + 1
    return counts


def snapshot_feature_vector(snapshot: SnapshotImage, candidate: KernelPointerCandidate,
                            incounts: dict[int, int],
                            cap: int = DEFAULT_TRAVERSAL_CAP,
                            link_offset: int = DEFAULT_LINK_OFFSET) -> np.ndarray | None:
    """128 raw bytes at the translated target plus [distance, count, size, incount].

    Bytes past the end of the target's page are zero-filled (the next
    virtual page may live anywhere physically). Untranslatable targets
    return None and are excluded from training sets.
    """
    t = translate(snapshot, candidate.vaddr)
    if t is None:
        return None
    in_page = candidate.vaddr & (t.page_size - 1)
    avail = min(RAW_WINDOW, t.page_size - in_page, len(snapshot) - t.phys_addr)
    raw = np.zeros(RAW_WINDOW, dtype=np.float64)
    raw[:avail] = np.frombuffer(snapshot.data[t.phys_addr:t.phys_addr + avail], dtype=np.uint8)
    lf = list_features(snapshot, candidate.vaddr, cap=cap, link_offset=link_offset)
    extra = np.array([lf.distance, lf.count, lf.size,
                      incounts.get(candidate.vaddr, 0)], dtype=np.float64)
    return np.concatenate([raw, extra])


def snapshot_dataset(snapshot: SnapshotImage, labels: dict[int, str] | None = None,
                     cap: int = DEFAULT_TRAVERSAL_CAP,
                     link_offset: int = DEFAULT_LINK_OFFSET):
    """Feature rows for every translatable kernel pointer candidate.

    With a label sidecar (vaddr -> class name) the returned LabelVector is
    binary: 1 iff the candidate's target is a labeled structure. Provenance
    records the candidate's physical offset.
    """
    incounts = incount_map(snapshot)
    rows, provenance, labs = [], [], []
    labeled_addrs = set(labels) if labels else set()
    for cand in find_kernel_pointer_candidates(snapshot):
        row = snapshot_feature_vector(snapshot, cand, incounts, cap=cap, link_offset=link_offset)
        if row is None:
            continue
        rows.append(row)
        provenance.append((snapshot.source_id, cand.phys_offset))
        labs.append(int(cand.vaddr in labeled_addrs))
    values = np.vstack(rows) if rows else np.empty((0, SNAPSHOT_FEATURE_LEN))
    fm = FeatureMatrix(values, provenance)
    if labels is None:
        return fm, None
    return fm, LabelVector(np.array(labs, dtype=np.int64), BINARY_CLASSES)


def snapshot_multiclass_dataset(snapshot: SnapshotImage, labels: dict[int, str],
                                class_names: tuple[str, ...] | None = None,
                                cap: int = DEFAULT_TRAVERSAL_CAP,
                                link_offset: int = DEFAULT_LINK_OFFSET):
    """Rows only for candidates targeting labeled structures; label = class."""
    if not labels:
        raise InputError("no labeled structure addresses; cannot build a multiclass set")
    if class_names is None:
        class_names = tuple(sorted(set(labels.values())))
    name_to_idx = {n: i for i, n in enumerate(class_names)}
    incounts = incount_map(snapshot)
    rows, provenance, labs = [], [], []
    for cand in find_kernel_pointer_candidates(snapshot):
        if cand.vaddr not in labels:
            continue
        row = snapshot_feature_vector(snapshot, cand, incounts, cap=cap, link_offset=link_offset)
        if row is None:
            continue
        rows.append(row)
        provenance.append((snapshot.source_id, cand.phys_offset))
        labs.append(name_to_idx[labels[cand.vaddr]])
    values = np.vstack(rows) if rows else np.empty((0, SNAPSHOT_FEATURE_LEN))
    fm = FeatureMatrix(values, provenance)
    return fm, LabelVector(np.array(labs, dtype=np.int64), class_names)


def two_stage_classify(stage1: _forest.ForestModel, stage2: _forest.ForestModel,
                       rows: FeatureMatrix) -> list[str | None]:
    """Binary filter, then multiclass typing of the positives only.

    Stage-1 negatives get None ("not of interest"); stage 2 is never
    consulted for them.
    """
    for model, name in ((stage1, "stage1"), (stage2, "stage2")):
        if model.n_features != rows.cols:
            raise InputError(
                f"{name} model expects {model.n_features} columns, rows have {rows.cols}")
    out: list[str | None] = [NOT_OF_INTEREST] * rows.rows
    if rows.rows == 0:
        return out
    stage1_pred = _forest.predict(stage1, rows.values)
    positives = np.nonzero(stage1_pred == 1)[0]
    if positives.size:
        stage2_pred = _forest.predict(stage2, rows.values[positives])
        for i, cls in zip(positives, stage2_pred):
            out[int(i)] = stage2.class_names[int(cls)]
    return out


# ---------------------------------------------------------------------------
# Label sidecar: text lines `vaddr class_name`

def load_snapshot_labels(path) -> dict[int, str]:
    if not os.path.isfile(path):
        raise InputError(f"no such file: {path}")
    labels: dict[int, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise InputError(f"{path}:{lineno}: expected 'vaddr class_name'")
            labels[int(parts[0], 16)] = parts[1]
    return labels


def save_snapshot_labels(labels: dict[int, str], path) -> None:
    lines = [f"{vaddr:#x} {name}" for vaddr, name in sorted(labels.items())]
    atomic_write_text(path, "\n".join(lines) + "\n")

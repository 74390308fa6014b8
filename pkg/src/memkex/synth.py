"""Ground-truth-labeled synthetic heaps and physical snapshots, plus corpus
loading.

Heaps mimic the allocator convention the header decoder relies on: every
allocation is preceded by an 8-byte size field (16-byte-granular sizes,
prev-in-use bit set) and carries the ssh -> session_state -> newkeys ->
{enc -> (key, iv), mac -> key} pointer chain among filler allocations.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .core import (
    HeapDump, InputError, KeyRecord, SnapshotImage, load_heap_dump, load_snapshot,
)
from .heapgraph import NO_OFFSET, NodeInfo
from .chunking import byte_entropy
from .snapshot import (
    ENTRY_PAGE_SIZE, ENTRY_PRESENT, PAGE_2M, PAGE_4K, load_snapshot_labels,
)

log = logging.getLogger(__name__)

DEFAULT_HEAP_BASE = 0x555555550000
MIN_ENTROPY = 6.0  # bits/byte over the 128-byte window at each key start

KEY_ROLE_DIRECTION = {"A": 0, "B": 1, "C": 0, "D": 1, "E": 0, "F": 1}
KEY_ROLE_KIND = {"A": "iv", "B": "iv", "C": "ek", "D": "ek", "E": "ik", "F": "ik"}

DEFAULT_FILLER_MIX = {"zeros": 0.2, "text": 0.2, "random": 0.4, "pointer_lists": 0.2}


@dataclass(frozen=True)
class HeapRecipe:
    seed: int
    heap_size: int = 65536
    # role letter -> key length in bytes
    key_roles: dict = field(default_factory=lambda: {"A": 16, "B": 16, "C": 24,
                                                     "D": 24, "E": 32, "F": 32})
    filler_mix: dict = field(default_factory=lambda: dict(DEFAULT_FILLER_MIX))
    base_addr: int = DEFAULT_HEAP_BASE

    def __post_init__(self):
        if self.heap_size < 4096:
            raise InputError("heap_size must be at least 4096")
        if abs(sum(self.filler_mix.values()) - 1.0) > 1e-9:
            raise InputError("filler_mix fractions must sum to 1")
        for role, length in self.key_roles.items():
            if role not in KEY_ROLE_DIRECTION:
                raise InputError(f"unknown key role {role!r}")
            if not 12 <= length <= 64:
                raise InputError(f"key {role}: length {length} outside [12, 64]")


@dataclass(frozen=True)
class ListSpec:
    count: int
    spacing: int
    circular: bool
    class_id: int


@dataclass(frozen=True)
class SnapshotRecipe:
    seed: int
    image_size: int = 16 << 20
    list_specs: tuple = ()
    decoy_count: int = 2000
    mapped_pages: int = 512  # 4 KiB pages mapped at the kernel-half window


@dataclass
class HeapGroundTruth:
    """Exact expected graph content for a generated heap."""

    # every allocation: addr -> (size, kind)
    allocations: dict[int, tuple[int, str]] = field(default_factory=dict)
    # expected graph nodes (allocations with at least one incoming pointer)
    nodes: dict[int, NodeInfo] = field(default_factory=dict)
    edges: dict[tuple[int, int], int] = field(default_factory=dict)
    key_buffers: dict[str, int] = field(default_factory=dict)  # role -> buffer addr
    ssh_addr: int = 0


class _HeapBuilder:
    """Sequential bump allocator over a byte buffer with planted pointers."""

    def __init__(self, recipe: HeapRecipe, rng: np.random.Generator):
        self.recipe = recipe
        self.rng = rng
        self.data = bytearray(recipe.heap_size)
        self.base = recipe.base_addr
        self.cursor = 0  # next header goes here
        self.gt = HeapGroundTruth()
        # addr -> list of (offset, target_addr) planted pointers
        self.pointers: dict[int, list[tuple[int, int]]] = {}

    def remaining(self) -> int:
        return self.recipe.heap_size - self.cursor

    def alloc(self, payload_len: int, kind: str) -> int:
        size = max(16, -(-payload_len // 16) * 16)  # 16-byte-granular usable size
        if self.cursor + 8 + size > self.recipe.heap_size:
            raise InputError("recipe too small to fit the mandatory allocations")
        header_off = self.cursor
        addr = self.base + header_off + 8
        self.data[header_off:header_off + 8] = (size | 0x1).to_bytes(8, "little")
        self.cursor = header_off + 8 + size
        self.gt.allocations[addr] = (size, kind)
        self.pointers[addr] = []
        return addr

    def write(self, addr: int, offset: int, payload: bytes) -> None:
        off = addr - self.base + offset
        self.data[off:off + len(payload)] = payload

    def plant_pointer(self, addr: int, offset: int, target: int) -> None:
        self.write(addr, offset, target.to_bytes(8, "little"))
        self.pointers[addr].append((offset, target))


def _build_chain(b: _HeapBuilder, recipe: HeapRecipe,
                 rng: np.random.Generator) -> list[KeyRecord]:
    """Plant the ssh key-structure chain; returns the generated key records."""
    directions = sorted({KEY_ROLE_DIRECTION[r] for r in recipe.key_roles})
    keys: list[KeyRecord] = []

    ssh = b.alloc(64, "ssh")
    session = b.alloc(128, "session_state")
    # anchor: a global-like allocation whose stored pointer roots the chain
    anchor = b.alloc(16, "anchor")
    b.plant_pointer(anchor, 0, ssh)
    b.plant_pointer(ssh, 16, session)

    for direction in directions:
        roles = {KEY_ROLE_KIND[r]: r for r in recipe.key_roles
                 if KEY_ROLE_DIRECTION[r] == direction}
        newkeys = b.alloc(48, "newkeys")
        b.plant_pointer(session, 32 + 8 * direction, newkeys)

        if "ek" in roles or "iv" in roles:
            enc = b.alloc(64, "enc")
            b.plant_pointer(newkeys, 0, enc)
            for kind, slot in (("ek", 16), ("iv", 24)):
                if kind in roles:
                    role = roles[kind]
                    length = recipe.key_roles[role]
                    buf = b.alloc(length, "key_buffer")
                    key_bytes = rng.bytes(length)
                    b.write(buf, 0, key_bytes)
                    # random allocation slack keeps the key window high-entropy
                    slack = b.gt.allocations[buf][0] - length
                    b.write(buf, length, rng.bytes(slack))
                    b.plant_pointer(enc, slot, buf)
                    b.gt.key_buffers[role] = buf
                    keys.append(KeyRecord(role, key_bytes))
                    # keep the prefilter window high-entropy past short keys
                    pad = b.alloc(128, "random")
                    b.write(pad, 0, rng.bytes(128))
        if "ik" in roles:
            role = roles["ik"]
            length = recipe.key_roles[role]
            mac = b.alloc(64, "mac")
            b.plant_pointer(newkeys, 8, mac)
            buf = b.alloc(length, "key_buffer")
            key_bytes = rng.bytes(length)
            b.write(buf, 0, key_bytes)
            slack = b.gt.allocations[buf][0] - length
            b.write(buf, length, rng.bytes(slack))
            b.plant_pointer(mac, 16, buf)
            b.gt.key_buffers[role] = buf
            keys.append(KeyRecord(role, key_bytes))
            pad = b.alloc(128, "random")
            b.write(pad, 0, rng.bytes(128))

    b.gt.ssh_addr = ssh
    return keys


def _fill(b: _HeapBuilder, rng: np.random.Generator) -> None:
    """Fill the rest of the heap per the recipe's filler mix."""
    kinds = sorted(b.recipe.filler_mix)
    probs = np.array([b.recipe.filler_mix[k] for k in kinds])
    probs = probs / probs.sum()
    printable = np.arange(0x20, 0x7F, dtype=np.uint8)
    while b.remaining() >= 8 + 16 + 8:
        kind = kinds[int(rng.choice(len(kinds), p=probs))]
        size = int(rng.integers(2, 9)) * 16
        size = min(size, ((b.remaining() - 8) // 16) * 16)
        if size < 16:
            break
        if kind == "pointer_lists" and b.remaining() < 4 * (8 + 32):
            kind = "random"
        if kind == "zeros":
            b.alloc(size, "zeros")
        elif kind == "text":
            addr = b.alloc(size, "text")
            b.write(addr, 0, rng.choice(printable, size=size).tobytes())
        elif kind == "random":
            addr = b.alloc(size, "random")
            b.write(addr, 0, rng.bytes(size))
        else:
            # short chain of decoy structures plus an anchor holding the head
            n = int(rng.integers(2, 4))
            n = min(n, (b.remaining() - (8 + 16)) // (8 + 32))
            if n < 1:
                continue
            elems = [b.alloc(32, "filler_node") for _ in range(n)]
            anchor = b.alloc(16, "filler_anchor")
            b.plant_pointer(anchor, 0, elems[0])
            for a, c in zip(elems, elems[1:]):
                b.plant_pointer(a, 0, c)


def _expected_graph(b: _HeapBuilder) -> None:
    """Derive the expected node set and NodeInfo from the planted layout."""
    pointed_to = {t for ptrs in b.pointers.values() for (_, t) in ptrs}
    gt = b.gt
    for addr in sorted(pointed_to):
        size, _ = gt.allocations[addr]
        ptrs = sorted(p for p in b.pointers[addr] if p[0] + 8 <= size)
        children = sorted({t for (_, t) in ptrs})
        gt.nodes[addr] = NodeInfo(
            size=size,
            pointer_count=len(ptrs),
            last_pointer_offset=ptrs[-1][0] if ptrs else NO_OFFSET,
            last_valid_pointer_offset=ptrs[-1][0] if ptrs else NO_OFFSET,
            out_degree=len(children),
        )
        for off, target in ptrs:
            gt.edges.setdefault((addr, target), off)


def generate_heap(recipe: HeapRecipe) -> tuple[HeapDump, HeapGroundTruth]:
    """Deterministic synthetic heap with the planted key chain and ground truth."""
    rng = np.random.Generator(np.random.Philox(key=recipe.seed))
    b = _HeapBuilder(recipe, rng)
    keys = _build_chain(b, recipe, rng)
    _fill(b, rng)
    _expected_graph(b)

    heap = HeapDump(bytes(b.data), recipe.base_addr, recipe.base_addr + recipe.heap_size,
                    tuple(keys), source_id=f"synth-heap-{recipe.seed}")
    for role, buf in b.gt.key_buffers.items():
        off = buf - heap.base_addr
        window = heap.data[off:off + 128]
        ent = byte_entropy(window)
        if ent < MIN_ENTROPY:
            raise InputError(
                f"generated key region for role {role} scores {ent:.2f} bits/byte "
                f"(< {MIN_ENTROPY}); recipe produced a degenerate layout")
    return heap, b.gt


# ---------------------------------------------------------------------------
# Snapshots: fabricated page tables, planted linked lists, decoy pointers

SNAPSHOT_VBASE = 0xFFFF888000000000
SNAPSHOT_VBASE_2M = 0xFFFF888800000000


class _TableBuilder:
    def __init__(self, image: bytearray, root: int):
        self.image = image
        self.root = root
        self.next_table_page = root + PAGE_4K

    def _write_entry(self, table: int, index: int, value: int) -> None:
        off = table + index * 8
        self.image[off:off + 8] = value.to_bytes(8, "little")

    def _read_entry(self, table: int, index: int) -> int:
        off = table + index * 8
        return int.from_bytes(self.image[off:off + 8], "little")

    def _child_table(self, table: int, index: int) -> int:
        entry = self._read_entry(table, index)
        if entry & ENTRY_PRESENT:
            return entry & 0x000FFFFFFFFFF000
        page = self.next_table_page
        self.next_table_page += PAGE_4K
        if page + PAGE_4K > len(self.image):
            raise InputError("mapping overflow: no room for another page table")
        self._write_entry(table, index, page | ENTRY_PRESENT)
        return page

    def map_4k(self, vaddr: int, phys: int) -> None:
        t = self.root
        for shift in (39, 30, 21):
            t = self._child_table(t, (vaddr >> shift) & 0x1FF)
        self._write_entry(t, (vaddr >> 12) & 0x1FF, phys | ENTRY_PRESENT)

    def map_2m(self, vaddr: int, phys: int) -> None:
        t = self.root
        for shift in (39, 30):
            t = self._child_table(t, (vaddr >> shift) & 0x1FF)
        self._write_entry(t, (vaddr >> 21) & 0x1FF, phys | ENTRY_PRESENT | ENTRY_PAGE_SIZE)


def generate_snapshot(recipe: SnapshotRecipe) -> tuple[SnapshotImage, dict[int, str]]:
    """Deterministic synthetic snapshot: 4-level tables, planted lists, decoys.

    Returns the image plus a label sidecar mapping every planted element
    address to its class name (``class<id>``).
    """
    rng = np.random.Generator(np.random.Philox(key=recipe.seed))
    image = bytearray(recipe.image_size)
    root = 0x1000
    tb = _TableBuilder(image, root)

    # Reserve the low region for tables, map a 4 KiB-page window after them.
    table_budget = 64 * PAGE_4K
    phys_base = root + table_budget
    mapped_bytes = recipe.mapped_pages * PAGE_4K
    if phys_base + mapped_bytes + 3 * PAGE_2M > recipe.image_size:
        raise InputError("mapping overflow: image too small for the requested mapping")
    for i in range(recipe.mapped_pages):
        tb.map_4k(SNAPSHOT_VBASE + i * PAGE_4K, phys_base + i * PAGE_4K)

    # A couple of 2 MiB pages for large-page translation coverage.
    phys_2m = -(-(phys_base + mapped_bytes) // PAGE_2M) * PAGE_2M
    for i in range(2):
        tb.map_2m(SNAPSHOT_VBASE_2M + i * PAGE_2M, phys_2m + i * PAGE_2M)

    def v2p(vaddr: int) -> int:
        return phys_base + (vaddr - SNAPSHOT_VBASE)

    def write_word(vaddr: int, value: int) -> None:
        p = v2p(vaddr)
        image[p:p + 8] = value.to_bytes(8, "little")

    # Plant the linked lists inside the mapped window.
    labels: dict[int, str] = {}
    cursor = SNAPSHOT_VBASE + PAGE_4K  # leave the first mapped page for decoy targets
    for spec in recipe.list_specs:
        span = spec.count * spec.spacing
        if cursor + span > SNAPSHOT_VBASE + mapped_bytes:
            raise InputError("mapping overflow: lists do not fit in the mapped window")
        elems = [cursor + i * spec.spacing for i in range(spec.count)]
        for i, e in enumerate(elems):
            if i + 1 < len(elems):
                nxt = elems[i + 1]
            else:
                nxt = elems[0] if spec.circular else 0
            write_word(e, nxt)
            # class-specific byte pattern after the link gives stage 2 signal
            pattern = bytes([(spec.class_id * 37 + j) % 251 for j in range(24)])
            p = v2p(e)
            image[p + 8:p + 8 + 24] = pattern
            labels[e] = f"class{spec.class_id}"
        cursor += span + spec.spacing

    # Head references: planted "globals" so list heads have incoming pointers.
    free_words = [SNAPSHOT_VBASE + i * 8 for i in range(PAGE_4K // 8)]
    rng.shuffle(free_words)
    heads = [min(e for e in labels if labels[e] == f"class{s.class_id}")
             for s in recipe.list_specs]
    for head in heads:
        write_word(free_words.pop(), head)

    # Decoys: canonical kernel words scattered over unmapped parts of the image.
    decoy_region_start = tb.next_table_page
    decoy_region_end = phys_base - 8
    n_slots = (decoy_region_end - decoy_region_start) // 8
    if recipe.decoy_count > n_slots:
        raise InputError("decoy_count exceeds available scratch space")
    slots = rng.choice(n_slots, size=recipe.decoy_count, replace=False)
    mapped_tail = SNAPSHOT_VBASE + mapped_bytes
    for s in np.sort(slots):
        off = decoy_region_start + int(s) * 8
        if rng.random() < 0.7:
            # points at a random mapped word: traversal hits noise and dies
            target = SNAPSHOT_VBASE + int(rng.integers(0, mapped_bytes - 8)) & ~0x7
        else:
            target = 0xFFFF900000000000 + (int(rng.integers(0, 1 << 32)) & ~0x7)
        image[off:off + 8] = target.to_bytes(8, "little")

    snap = SnapshotImage(bytes(image), root, source_id=f"synth-snapshot-{recipe.seed}")
    return snap, labels


# ---------------------------------------------------------------------------
# Corpus loading

def load_corpus(directory, kind: str) -> list:
    """Enumerate (raw, sidecar) pairs lexicographically and load them.

    kind="heap": returns HeapDump objects from <name>.raw + <name>.meta.
    kind="snapshot": returns (SnapshotImage, labels-or-None) tuples from
    <name>.raw + <name>.meta (holding page_table_root) + optional
    <name>.labels. Invalid entries are logged and skipped.
    """
    if kind not in ("heap", "snapshot"):
        raise InputError(f"unknown corpus kind {kind!r}")
    if not os.path.isdir(directory):
        raise InputError(f"not a directory: {directory}")
    entries = []
    names = sorted(f[:-4] for f in os.listdir(directory) if f.endswith(".raw"))
    for name in names:
        raw = os.path.join(directory, name + ".raw")
        meta = os.path.join(directory, name + ".meta")
        if not os.path.isfile(meta):
            log.warning("skipping %s: missing sidecar %s", raw, meta)
            continue
        try:
            if kind == "heap":
                entries.append(load_heap_dump(raw, meta))
            else:
                with open(meta, "r", encoding="utf-8") as f:
                    root = None
                    for line in f:
                        parts = line.split()
                        if len(parts) == 2 and parts[0] == "page_table_root":
                            root = int(parts[1], 16)
                    if root is None:
                        raise InputError(f"{meta}: missing page_table_root")
                snap = load_snapshot(raw, root)
                labels_path = os.path.join(directory, name + ".labels")
                labels = load_snapshot_labels(labels_path) if os.path.isfile(labels_path) else None
                entries.append((snap, labels))
        except InputError as exc:
            log.warning("skipping %s: %s", raw, exc)
    if not entries:
        raise InputError(f"no valid {kind} entries in {directory}")
    return entries

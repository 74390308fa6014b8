"""Directed graph of allocator structures and the 9-column node feature rows.

Nodes are structure addresses reached through valid pointers; edges run from
a structure to each distinct structure it stores a valid pointer to.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import FeatureMatrix, HeapDump, InputError, LabelVector, key_spans
from .scan import find_pointer_candidates, is_valid_pointer, PointerCandidate

GRAPHKEX_LEN = 9

BINARY_CLASSES = ("no_key", "key")

NO_OFFSET = -1  # sentinel: "no pointer present" (0 is a legal offset)


@dataclass(frozen=True)
class NodeInfo:
    size: int
    pointer_count: int
    last_pointer_offset: int
    last_valid_pointer_offset: int
    out_degree: int


@dataclass
class HeapGraph:
    nodes: dict[int, NodeInfo] = field(default_factory=dict)
    # (parent, child) -> byte offset of the first pointer that created the edge
    edges: dict[tuple[int, int], int] = field(default_factory=dict)

    def children(self, addr: int) -> list[int]:
        return sorted(c for (p, c) in self.edges if p == addr)

    def parents(self, addr: int) -> list[int]:
        return sorted(p for (p, c) in self.edges if c == addr)

    def has_path(self, src: int, dst: int) -> bool:
        """Directed reachability, for chain checks and diagnostics."""
        seen = set()
        stack = [src]
        while stack:
            cur = stack.pop()
            if cur == dst:
                return True
            if cur in seen:
                continue
            seen.add(cur)
            stack.extend(c for (p, c) in self.edges if p == cur)
        return False

    def component_count(self) -> int:
        """Number of weakly connected components (diagnostic only)."""
        adj: dict[int, set[int]] = {n: set() for n in self.nodes}
        for p, c in self.edges:
            adj[p].add(c)
            adj[c].add(p)
        seen: set[int] = set()
        count = 0
        for start in self.nodes:
            if start in seen:
                continue
            count += 1
            stack = [start]
            while stack:
                cur = stack.pop()
                if cur in seen:
                    continue
                seen.add(cur)
                stack.extend(adj[cur] - seen)
        return count


def _usable_size(heap: HeapDump, vaddr: int) -> int:
    raw = heap.read_word(vaddr - 8 - heap.base_addr)
    return raw & ~0x7


def build_heap_graph(heap: HeapDump) -> HeapGraph:
    """Build the structure graph from every valid pointer in the heap.

    Each discovered structure region is scanned at 8-byte strides from its
    start for floor(size/8) words; in-range words count as inner pointer
    candidates and valid ones become child nodes plus directed edges.
    Newly discovered children are scanned too, even when the parent
    structure start is not heap-aligned.
    """
    graph = HeapGraph()
    valid_cache: dict[int, bool] = {}

    def valid(vaddr: int) -> bool:
        if vaddr not in valid_cache:
            valid_cache[vaddr] = is_valid_pointer(heap, PointerCandidate(0, vaddr))
        return valid_cache[vaddr]

    pending = []
    for cand in find_pointer_candidates(heap):
        if valid(cand.value):
            pending.append(cand.value)

    while pending:
        addr = pending.pop()
        if addr in graph.nodes:
            continue
        size = _usable_size(heap, addr)
        base_off = addr - heap.base_addr
        ptr_count = 0
        last_ptr = NO_OFFSET
        last_valid = NO_OFFSET
        children = set()
        for off in range(0, (size // 8) * 8, 8):
            pos = base_off + off
            if pos + 8 > len(heap):
                break
            word = heap.read_word(pos)
            if heap.base_addr <= word <= heap.end_addr:
                ptr_count += 1
                last_ptr = off
                if valid(word):
                    last_valid = off
                    children.add(word)
                    graph.edges.setdefault((addr, word), off)
                    if word not in graph.nodes:
                        pending.append(word)
        graph.nodes[addr] = NodeInfo(size, ptr_count, last_ptr, last_valid, len(children))
    return graph


def node_feature_vector(graph: HeapGraph, node: int, parent: int | None = None,
                        offset_in_parent: int = NO_OFFSET) -> np.ndarray:
    """[size, ptr_count, last_ptr_off, last_valid_off, out_deg,
        parent_size, parent_ptr_count, offset_in_parent, parent_out_deg]

    Parent fields are 0 (offsets -1) for a parentless node.
    """
    if node not in graph.nodes:
        raise InputError(f"unknown node {node:#x}")
    info = graph.nodes[node]
    row = [info.size, info.pointer_count, info.last_pointer_offset,
           info.last_valid_pointer_offset, info.out_degree]
    if parent is None:
        row += [0, 0, NO_OFFSET, 0]
    else:
        if (parent, node) not in graph.edges:
            raise InputError(f"no edge {parent:#x} -> {node:#x}")
        pinfo = graph.nodes[parent]
        row += [pinfo.size, pinfo.pointer_count, offset_in_parent, pinfo.out_degree]
    return np.array(row, dtype=np.float64)


def graph_dataset(graph: HeapGraph, heap: HeapDump, labeled: bool = True):
    """One feature row per incoming edge of each node (plus one sentinel row
    for parentless nodes); label 1 iff the node region fully contains a key.

    Returns (FeatureMatrix, LabelVector or None); provenance records the
    node address.
    """
    if labeled and not heap.keys:
        raise InputError(
            f"heap {heap.source_id!r} has no key metadata; cannot produce training labels"
        )
    spans = key_spans(heap)

    def node_label(addr: int, size: int) -> int:
        start = addr - heap.base_addr
        end = start + size
        return int(any(start <= s and e <= end for s, e in spans))

    incoming: dict[int, list[tuple[int, int]]] = {n: [] for n in graph.nodes}
    for (p, c), off in graph.edges.items():
        incoming[c].append((p, off))

    rows = []
    provenance = []
    labels = []
    for addr in sorted(graph.nodes):
        info = graph.nodes[addr]
        contexts = sorted(incoming[addr]) or [(None, NO_OFFSET)]
        for parent, off in contexts:
            rows.append(node_feature_vector(graph, addr, parent, off))
            provenance.append((heap.source_id, addr))
            labels.append(node_label(addr, info.size))
    values = np.vstack(rows) if rows else np.empty((0, GRAPHKEX_LEN))
    fm = FeatureMatrix(values, provenance)
    if not labeled:
        return fm, None
    return fm, LabelVector(np.array(labels, dtype=np.int64), BINARY_CLASSES)


def save_graph(graph: HeapGraph, path) -> None:
    """Line-oriented export: NODE addr size ptrs lpo lvpo outdeg / EDGE p c off."""
    from .core import atomic_write_text
    lines = []
    for addr in sorted(graph.nodes):
        n = graph.nodes[addr]
        lines.append(f"NODE {addr:#x} {n.size} {n.pointer_count} "
                     f"{n.last_pointer_offset} {n.last_valid_pointer_offset} {n.out_degree}")
    for (p, c) in sorted(graph.edges):
        lines.append(f"EDGE {p:#x} {c:#x} {graph.edges[(p, c)]}")
    atomic_write_text(path, "\n".join(lines) + "\n")

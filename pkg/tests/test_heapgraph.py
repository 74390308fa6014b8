import struct

import numpy as np
import pytest

from memkex import core, heapgraph, scan
from memkex.synth import HeapRecipe, generate_heap

BASE = 0x555555550000


def make_heap(data, keys=()):
    return core.HeapDump(bytes(data), BASE, BASE + len(data), tuple(keys), "t")


def oracle_nodes(heap):
    """Re-derive the node set: valid pointer targets plus reachable children,
    without the builder's incremental bookkeeping."""
    valid_targets = {c.value for c in scan.find_valid_pointers(heap)}
    nodes = set()
    frontier = list(valid_targets)
    while frontier:
        addr = frontier.pop()
        if addr in nodes:
            continue
        nodes.add(addr)
        size = scan.structure_size(heap, addr)
        for off in range(0, (size // 8) * 8, 8):
            pos = addr - heap.base_addr + off
            if pos + 8 > len(heap):
                break
            w = heap.read_word(pos)
            if heap.base_addr <= w <= heap.end_addr and \
                    scan.is_valid_pointer(heap, scan.PointerCandidate(pos, w)):
                frontier.append(w)
    return nodes


def test_planted_chain_has_directed_path(synth_heap):
    heap, gt = synth_heap
    graph = heapgraph.build_heap_graph(heap)
    for role, buf in gt.key_buffers.items():
        assert graph.has_path(gt.ssh_addr, buf), f"no path ssh -> key {role}"


def test_no_valid_pointers_empty_graph():
    heap = make_heap(bytes(4096))
    graph = heapgraph.build_heap_graph(heap)
    assert graph.nodes == {}
    assert graph.edges == {}


def test_node_set_matches_oracle_on_random_heap():
    rng = np.random.default_rng(21)
    data = bytearray(rng.bytes(65536))
    # plant a few real structures so the graph is not trivially empty
    for i, (hdr_off, size) in enumerate([(100 * 8, 0x40), (200 * 8, 0x20), (300 * 8, 0x60)]):
        struct.pack_into("<Q", data, hdr_off, size | 1)
        struct.pack_into("<Q", data, 400 * 8 + i * 8, BASE + hdr_off + 8)
    heap = make_heap(bytes(data))
    graph = heapgraph.build_heap_graph(heap)
    assert set(graph.nodes) == oracle_nodes(heap)


def test_idempotent_build(synth_heap):
    heap, _ = synth_heap
    g1 = heapgraph.build_heap_graph(heap)
    g2 = heapgraph.build_heap_graph(heap)
    assert g1.nodes == g2.nodes
    assert g1.edges == g2.edges


def test_multi_parent_node_single_entry():
    data = bytearray(512)
    struct.pack_into("<Q", data, 56, 0x21)   # shared child at +64
    struct.pack_into("<Q", data, 120, 0x21)  # parent A at +128
    struct.pack_into("<Q", data, 152, 0x21)  # parent B at +160
    struct.pack_into("<Q", data, 128, BASE + 64)   # A -> child
    struct.pack_into("<Q", data, 160, BASE + 64)   # B -> child
    struct.pack_into("<Q", data, 0, BASE + 128)    # roots
    struct.pack_into("<Q", data, 8, BASE + 160)
    heap = make_heap(bytes(data))
    graph = heapgraph.build_heap_graph(heap)
    assert BASE + 64 in graph.nodes
    assert sorted(graph.parents(BASE + 64)) == [BASE + 128, BASE + 160]
    # one node despite two parents
    assert list(graph.nodes).count(BASE + 64) == 1


def test_edge_soundness(synth_heap):
    heap, _ = synth_heap
    graph = heapgraph.build_heap_graph(heap)
    for (p, c), off in graph.edges.items():
        size = graph.nodes[p].size
        assert 0 <= off <= size - 8
        assert heap.read_word(p - heap.base_addr + off) == c


def test_nodeinfo_bounds(synth_heap):
    heap, _ = synth_heap
    graph = heapgraph.build_heap_graph(heap)
    for addr, info in graph.nodes.items():
        assert info.out_degree <= info.pointer_count
        assert info.last_valid_pointer_offset <= info.last_pointer_offset
        outgoing = sum(1 for (p, _) in graph.edges if p == addr)
        assert info.out_degree == outgoing


def test_node_feature_vector_sentinels():
    data = bytearray(256)
    struct.pack_into("<Q", data, 56, 0x21)
    struct.pack_into("<Q", data, 0, BASE + 64)
    heap = make_heap(bytes(data))
    graph = heapgraph.build_heap_graph(heap)
    row = heapgraph.node_feature_vector(graph, BASE + 64)
    assert list(row[5:]) == [0, 0, -1, 0]


def test_node_feature_vector_leaf_key_buffer(synth_heap):
    heap, gt = synth_heap
    graph = heapgraph.build_heap_graph(heap)
    buf = gt.key_buffers["E"]  # 32-byte integrity key
    parent = graph.parents(buf)[0]
    off = graph.edges[(parent, buf)]
    row = heapgraph.node_feature_vector(graph, buf, parent, off)
    assert row[0] == 32          # size
    assert row[1] == 0           # no inner pointers
    assert row[2] == -1 and row[3] == -1
    assert row[4] == 0           # out degree
    assert row[7] == off


def test_node_feature_vector_out_degree_matches_children(synth_heap):
    heap, gt = synth_heap
    graph = heapgraph.build_heap_graph(heap)
    newkeys = [a for a, (s, kind) in gt.allocations.items() if kind == "newkeys"]
    for nk in newkeys:
        row = heapgraph.node_feature_vector(graph, nk)
        assert row[4] == len(graph.children(nk))


def test_node_feature_vector_unknown_node():
    graph = heapgraph.HeapGraph()
    with pytest.raises(core.InputError):
        heapgraph.node_feature_vector(graph, 0xdead)


def test_graph_dataset_shapes_and_labels(synth_heap):
    heap, gt = synth_heap
    graph = heapgraph.build_heap_graph(heap)
    fm, lv = heapgraph.graph_dataset(graph, heap)
    assert fm.cols == 9
    assert fm.rows == lv.rows
    positive_addrs = {src_off for (_, src_off), lab in zip(fm.provenance, lv.labels) if lab == 1}
    # the distinct positive node regions are exactly the key buffers
    assert positive_addrs == set(gt.key_buffers.values())
    assert np.isfinite(fm.values).all()


def test_graph_dataset_refuses_unlabeled():
    heap = make_heap(bytes(4096))
    graph = heapgraph.build_heap_graph(heap)
    with pytest.raises(core.InputError):
        heapgraph.graph_dataset(graph, heap)
    fm, lv = heapgraph.graph_dataset(graph, heap, labeled=False)
    assert lv is None
    assert fm.rows == 0 and fm.cols == 9


def test_save_graph_format(tmp_path, synth_heap):
    heap, _ = synth_heap
    graph = heapgraph.build_heap_graph(heap)
    heapgraph.save_graph(graph, tmp_path / "g.txt")
    lines = (tmp_path / "g.txt").read_text().splitlines()
    nodes = [l for l in lines if l.startswith("NODE ")]
    edges = [l for l in lines if l.startswith("EDGE ")]
    assert len(nodes) == len(graph.nodes)
    assert len(edges) == len(graph.edges)

"""memkex: memory-forensics toolkit.

Scans heap dumps and physical memory snapshots for pointers, engineers
slice/metadata/header/graph feature families plus linked-list snapshot
features, and trains a self-contained random forest to locate SSH session
keys and classify kernel structure references.
"""

from .core import (
    FeatureMatrix, HeapDump, InputError, KeyRecord, LabelVector, MemkexError,
    SnapshotImage, load_heap_dump, load_snapshot,
)

__all__ = [
    "FeatureMatrix", "HeapDump", "InputError", "KeyRecord", "LabelVector",
    "MemkexError", "SnapshotImage", "load_heap_dump", "load_snapshot",
]

__version__ = "0.1.0"

import sys

import pytest

from memkex.synth import HeapRecipe, ListSpec, SnapshotRecipe, generate_heap, generate_snapshot


@pytest.fixture(scope="session")
def synth_heap():
    heap, gt = generate_heap(HeapRecipe(seed=7))
    return heap, gt


@pytest.fixture(scope="session")
def synth_snapshot():
    specs = (
        ListSpec(count=17, spacing=0x1C0, circular=True, class_id=0),
        ListSpec(count=10, spacing=0x200, circular=False, class_id=1),
        ListSpec(count=8, spacing=0x180, circular=False, class_id=2),
    )
    recipe = SnapshotRecipe(seed=11, list_specs=specs, decoy_count=1500)
    image, labels = generate_snapshot(recipe)
    return image, labels


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "VERDICTS", None) if mod else None
    if lines:
        terminalreporter.section("acceptance verdicts")
        for line in lines:
            terminalreporter.write_line(line)

from __future__ import annotations

import pytest

from spatial_arena.qa import generate_qa, quality_filter
from spatial_arena.scene import generate_scene


@pytest.fixture(scope="session")
def scene7():
    return generate_scene(7)


@pytest.fixture(scope="session")
def multi_floor_scene():
    # seed 3 generates a multi-floor house under the default profile
    for seed in range(3, 40):
        scene = generate_scene(seed)
        if len(scene.floors) >= 2:
            return scene
    raise RuntimeError("no multi-floor scene found in seed range")


@pytest.fixture(scope="session")
def qa_items(scene7):
    items = generate_qa(scene7, 40, seed=11)
    kept, _ = quality_filter(scene7, items)
    assert kept, "fixture scene produced no filtered QA items"
    return kept

from __future__ import annotations

import json
from pathlib import Path

import pytest

from agentdriver.scene import load_snapshot

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixture_path() -> Path:
    return FIXTURES / "scene_threeobj.json"


@pytest.fixture(scope="session")
def fixture_manifest() -> dict:
    return json.loads((FIXTURES / "scene_threeobj_manifest.json").read_text())


@pytest.fixture()
def fixture_snap(fixture_path):
    return load_snapshot(fixture_path)

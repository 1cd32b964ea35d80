from __future__ import annotations

import json
from pathlib import Path

import pytest

ORACLES = Path(__file__).parent / "oracles"


def load_oracle(name: str):
    return json.loads((ORACLES / name).read_text())


@pytest.fixture(scope="session")
def ml_oracle():
    return load_oracle("ml_values.json")


@pytest.fixture(scope="session")
def misc_oracle():
    return load_oracle("misc.json")

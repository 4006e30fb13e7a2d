import sys
from pathlib import Path

import pytest

TESTS = Path(__file__).resolve().parent
sys.path.insert(0, str(TESTS))  # makes the oracles module importable


@pytest.fixture
def fixtures() -> Path:
    return TESTS / "fixtures"

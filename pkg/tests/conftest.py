import sys
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
PACK_DIR = FIXTURES / "pack"

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def pack_dir() -> Path:
    return PACK_DIR


@pytest.fixture(scope="session")
def parsed_pack():
    from stepmeter.simfile import parse_pack

    return parse_pack(PACK_DIR)

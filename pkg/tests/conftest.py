import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make `oracles` importable

from carpet import geometry


@pytest.fixture(scope="session")
def sc3():
    return geometry.standard_carpet()

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sheetflow.model import MachineModel, load_bundled


@pytest.fixture(scope="session")
def demo4() -> MachineModel:
    return load_bundled("demo4")


@pytest.fixture(scope="session")
def fig5() -> MachineModel:
    return load_bundled("fig5")


@pytest.fixture(scope="session")
def xerox4() -> MachineModel:
    return load_bundled("xerox4")


@pytest.fixture(scope="session")
def quality4() -> MachineModel:
    return load_bundled("quality4")


@pytest.fixture(scope="session")
def big() -> MachineModel:
    return load_bundled("big")

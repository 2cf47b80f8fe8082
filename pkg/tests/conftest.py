import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fcpnfv import ingest, telstra_sim  # noqa: E402

DATA = Path(__file__).parent / "data"

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE[number])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


def telstra_source() -> str:
    return os.environ.get("TELSTRA_DIR") or "simulated"


@pytest.fixture(scope="session")
def telstra_tables():
    """Real tables from $TELSTRA_DIR when set, otherwise the simulator."""
    root = os.environ.get("TELSTRA_DIR")
    if root:
        return ingest.load_telstra(root)
    return telstra_sim.simulate(telstra_sim.SimConfig())


@pytest.fixture(scope="session")
def telstra_matrix(telstra_tables):
    return ingest.assemble_features(telstra_tables)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def blobs(n_per, centers, sigma, seed):
    """Isotropic Gaussian blobs with labels 0..K-1."""
    r = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=float)
    X = np.vstack([c + sigma * r.standard_normal((n_per, centers.shape[1])) for c in centers])
    y = np.repeat(np.arange(len(centers)), n_per)
    return X, y

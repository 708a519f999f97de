import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qgfs import build_domain, solve_constrained  # noqa: E402


@pytest.fixture(scope="session")
def rect64():
    return build_domain("rectangle", nx=65, ny=65, lx=np.pi, ly=np.pi)


@pytest.fixture(scope="session")
def disk65():
    return build_domain("disk", nx=65, ny=65, radius=1.0)


@pytest.fixture(scope="session")
def disk129():
    return build_domain("disk", nx=129, ny=129, radius=1.0)


@pytest.fixture(scope="session")
def disk_const_sol(disk129):
    """Constrained solve on the disk with q - y = 1 (radial Bessel case)."""
    q = disk129.field(lambda x, y: 1.0 + y)
    return q, solve_constrained(disk129, q)

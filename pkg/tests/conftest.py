import numpy as np
import pytest

from sigma2geom.curvature import catalog
from sigma2geom.grid import flat_metric, make_grid


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def round_s3_64():
    return catalog("round_s3", {}, make_grid("S3Band", [64, 1, 1]))


@pytest.fixture(scope="session")
def torus16():
    grid = make_grid("Torus3", [16, 16, 16])
    return flat_metric(grid)


ACCEPTANCE = {}


def record(criterion: int, part: str, ok: bool, detail: str) -> None:
    """Store one acceptance measurement and echo it (visible with ``-s``)."""
    ACCEPTANCE.setdefault(criterion, []).append((part, bool(ok), detail))
    print(f"criterion {criterion} [{part}]: {'PASS' if ok else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[criterion]
        ok = all(p[1] for p in parts)
        detail = "; ".join(f"{name}: {'ok' if good else 'FAIL'} ({d})" for name, good, d in parts)
        terminalreporter.write_line(f"CRITERION {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")

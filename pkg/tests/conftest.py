import numpy as np
import pytest

from colloc import cloud as cl

# criterion number -> {check label: (passed, detail)}; printed in the terminal summary
ACCEPTANCE: dict = {}


def record(criterion: int, label: str, passed: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, {})[label] = (bool(passed), detail)


def random_support_cloud(rng, dim: int, k: int, spread: float = 1.0):
    """A center at the origin plus ``k`` random neighbors, as a cloud and support."""
    while True:
        pts = rng.uniform(-spread, spread, size=(k, dim))
        if np.min(np.linalg.norm(pts, axis=1)) > 0.05 * spread:
            break
    x = np.vstack([np.zeros(dim), pts])
    cloud = cl.PointCloud(x)
    return cloud, cl.select_support(cloud, 0, k)


def grid_cloud(n: int = 9, h: float = 0.125):
    """Interior-only regular grid, useful for stencil checks away from edges."""
    g = np.arange(n) * h
    X, Y = np.meshgrid(g, g, indexing="ij")
    return cl.PointCloud(np.stack([X.ravel(), Y.ravel()], axis=1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[key]
        ok = all(passed for passed, _ in checks.values())
        detail = "; ".join(f"{label} {d}{'' if passed else ' (fail)'}" for label, (passed, d) in checks.items())
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")

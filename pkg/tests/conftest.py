import numpy as np
import pytest

from pscforge.smoothfn import hermite_spline


def random_profile(rng: np.random.Generator, length: float = 1.0, knots: int = 4):
    """Positive C^2 quintic spline with moderate slopes; rejects profiles that dip below 0.3."""
    while True:
        t = np.linspace(0.0, length, knots)
        vals = rng.uniform(0.6, 1.4, knots)
        slopes = rng.uniform(-0.5, 0.5, knots)
        curv = rng.uniform(-1.0, 1.0, knots)
        prof = hermite_spline(t, vals, slopes, curv)
        if np.min(prof.eval(np.linspace(0.0, length, 401))) > 0.3:
            return prof


@pytest.fixture
def rng():
    return np.random.default_rng(42)


# acceptance criteria register here; the terminal summary prints one line each
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  [{num:2d}] {title}: {detail}")

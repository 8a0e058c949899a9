import numpy as np
import pytest

from limitnls.torus_field import SpectralField


def band_field(rng, lam, N=64, band=8, amp=0.5, decay=1.0):
    """Random field with modes |n| <= band and magnitudes ~ amp / <n>^decay."""
    c = np.zeros(N, dtype=complex)
    for n in range(-band, band + 1):
        c[n % N] = amp * (rng.normal() + 1j * rng.normal()) / (1.0 + abs(n)) ** decay
    return SpectralField(lam, c)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# Acceptance results, filled by test_acceptance and echoed at the end of the run.
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")

import numpy as np
import pytest

from osadoa.array_model import ArrayConfig, build_beamformer


@pytest.fixture(scope="session")
def cfg():
    """Desk-scale overlapped configuration, K = 7."""
    return ArrayConfig.from_elements(32, 8, 4, theta0=60.0)


@pytest.fixture(scope="session")
def cfg_nosa(cfg):
    return cfg.with_overlap(0)


@pytest.fixture(scope="session")
def W(cfg):
    return build_beamformer(cfg, "random_uniform", seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = []


@pytest.fixture
def criterion(capsys):
    """``criterion(n, passed, detail)`` records and prints one verdict line."""

    def record(number, passed, detail):
        line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

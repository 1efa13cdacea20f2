import numpy as np
import pytest

from agc.twin import ArchConfig, train_simulator
from agc.world import generate_dataset, generate_weather

SMALL_ARCH = ArchConfig(hidden=(32, 32), epochs=6, yield_epochs=30)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(24, 20, seed=11)


@pytest.fixture(scope="session")
def small_sim(small_dataset):
    return train_simulator(small_dataset, SMALL_ARCH, seed=0)


@pytest.fixture(scope="session")
def weather20():
    return generate_weather(20, 5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    """Record and print one PASS/FAIL line per acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

import os
import time
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

REPO = Path(__file__).resolve().parent.parent
MNIST_DIR = Path(os.environ.get("SMGD_MNIST_DIR", REPO / "data" / "mnist"))
CONFIGS = REPO / "configs"

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def mnist_dir():
    if not (MNIST_DIR / "subset-train-images-idx3-ubyte.gz").exists() and not any(MNIST_DIR.glob("train-images*")):
        pytest.skip(f"no MNIST files under {MNIST_DIR}")
    return MNIST_DIR


# acceptance criteria report one line each, repeated in the terminal summary

_CRITERIA: list[str] = []


class _Criterion:
    def __init__(self, number: int, name: str, budget_s: float):
        self.number, self.name, self.budget_s = number, name, budget_s
        self.detail = ""

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        over = elapsed > self.budget_s
        ok = exc_type is None and not over
        why = self.detail
        if exc_type is not None:
            why = f"{exc_type.__name__}: {exc}".splitlines()[0]
        elif over:
            why = f"{why}; over the {self.budget_s:g} s budget"
        line = f"criterion {self.number:2d} {'PASS' if ok else 'FAIL'} [{elapsed:7.2f} s] {self.name}: {why}"
        _CRITERIA.append(line)
        print(line)
        if exc_type is None and over:
            raise AssertionError(line)
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA):
            terminalreporter.write_line(line)

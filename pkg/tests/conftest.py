import numpy as np
import pytest

from bondml.dataset import generate_synthetic
from bondml.evaluation import weight_balanced_split

BENCH_N = 100_000
BENCH_TYPES = 50
BENCH_SEED = 1


@pytest.fixture(scope="session")
def small_ds():
    return generate_synthetic(2000, 8, seed=3)


@pytest.fixture(scope="session")
def bench_ds():
    return generate_synthetic(BENCH_N, BENCH_TYPES, seed=BENCH_SEED)


@pytest.fixture(scope="session")
def bench_split(bench_ds):
    sp = weight_balanced_split(bench_ds, 0.70, seed=0)
    return bench_ds.take(sp.train_indices), bench_ds.take(sp.test_indices)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    def record(number: int, ok: bool, detail: str) -> None:
        _ACCEPTANCE[number] = f"{'PASS' if ok else 'FAIL'}  criterion {number:2d}: {detail}"
        print(_ACCEPTANCE[number])
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[k])

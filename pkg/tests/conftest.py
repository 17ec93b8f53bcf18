import numpy as np
import pytest

from pourlstm.data import pad_and_mask, synth_generate
from pourlstm.numerics import Rng


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def small_corpus():
    return synth_generate(12, seed=5, t_range=(6, 14))


@pytest.fixture
def small_batch(small_corpus):
    return pad_and_mask(small_corpus)


def random_mask(rng, n, t):
    lengths = rng.integers(1, t + 1, n)
    lengths[0] = t
    return np.arange(t)[None, :] < lengths[:, None]


ACCEPTANCE = []


def report(criterion: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)

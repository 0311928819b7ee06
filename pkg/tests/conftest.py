import numpy as np
import pytest
import torch

from salgest.data import load_samples
from salgest.synth import make_synthetic_corpus

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """The 200-sequence synthetic corpus used by the acceptance criteria."""
    out = tmp_path_factory.mktemp("corpus")
    return make_synthetic_corpus(seed=1, n_sequences=200, frames_per_sequence=64, out_dir=out)


@pytest.fixture(scope="session")
def samples(corpus):
    return load_samples(corpus)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    return make_synthetic_corpus(seed=3, n_sequences=12, frames_per_sequence=64, out_dir=out)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def accept():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])

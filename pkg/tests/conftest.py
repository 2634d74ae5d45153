import numpy as np
import pytest

from vigilance._kernels import available_backends
from vigilance.dataio import SynthConfig, synth_dataset
from vigilance.features import FeatureSchema, extract_matrix

BACKENDS = available_backends()


@pytest.fixture(params=sorted(BACKENDS))
def backend(request):
    return BACKENDS[request.param]


@pytest.fixture(scope="session")
def small_dataset():
    return synth_dataset(SynthConfig(n_per_class=20), seed=3)


@pytest.fixture(scope="session")
def compact_xy(small_dataset):
    X, _ = extract_matrix(small_dataset, FeatureSchema.compact())
    return X, small_dataset.labels()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion and return the verdict."""

    def _report(number: int, text: str, ok: bool) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {text}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])

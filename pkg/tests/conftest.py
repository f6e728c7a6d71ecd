import time
from typing import NamedTuple

import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nlora_lab import _kernels_py

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def finite_matrices(max_rows=8, max_cols=8, lo=-1e3, hi=1e3):
    shapes = st.tuples(st.integers(1, max_rows), st.integers(1, max_cols))
    return shapes.flatmap(
        lambda s: arrays(np.float64, s, elements=st.floats(lo, hi, allow_nan=False, allow_infinity=False))
    )


def kernel_modules():
    mods = [pytest.param(_kernels_py, id="python")]
    try:
        from nlora_lab import _kernels

        mods.append(pytest.param(_kernels, id="cython"))
    except ImportError:
        mods.append(pytest.param(None, id="cython", marks=pytest.mark.skip("extension not built")))
    return mods


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class BenchmarkRun(NamedTuple):
    report: object
    chains: dict
    seconds: float


@pytest.fixture(scope="session")
def default_benchmark():
    """The default tuned benchmark, run once per session on a single core."""
    from nlora_lab.bench import run_default_benchmark

    start = time.perf_counter()
    report, chains = run_default_benchmark(threads=1, keep_chains=True)
    return BenchmarkRun(report, chains, time.perf_counter() - start)


# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    def _record(criterion: int, passed: bool, detail: str):
        ACCEPTANCE[criterion] = (bool(passed), detail)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")

import logging

import pytest

from gffopt import edfa, perf


@pytest.fixture(scope="session")
def surrogate():
    """Full-size surrogate shared by the link/perf/optimizer tests."""
    ds = edfa.generate_dataset(edfa.DEFAULT_ROWS, seed=1)
    model, _ = edfa.train_surrogate(ds, seed=0)
    return model


@pytest.fixture(scope="session")
def calibrated_nf(surrogate):
    logging.getLogger("gffopt.perf").setLevel(logging.ERROR)
    return perf.calibrate_noise_figure(surrogate).nf_db


ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])

import numpy as np
import pytest

from bladeseg.dataset import generate_dataset
from bladeseg.scene import GenerationConfig


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Ten 64x64 samples, shared read-only across tests."""
    root = tmp_path_factory.mktemp("tiny")
    manifest = generate_dataset(GenerationConfig(width=64, height=64), count=10, master_seed=11, out_dir=root)
    return root, manifest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion.

    Call it with (number, passed, detail) before asserting; the lines are
    echoed immediately and again in the terminal summary.
    """
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

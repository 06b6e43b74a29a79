import sys
from pathlib import Path

import pytest

from transatt.synth import SynthConfig, generate

sys.path.insert(0, str(Path(__file__).parent))

TOY = SynthConfig(num_root_classes=2, branching=(3, 4), depth=(2, 3), num_attributes=10,
                  attrs_per_path=(2, 4), num_entities=100, seed=0)


@pytest.fixture(scope="session")
def toy_data():
    """About 20 classes, 100 entities and 10 attributes."""
    return generate(TOY)


_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record ``(criterion, passed, detail)``; lines are printed in the terminal summary."""

    def record(n, name, passed, detail):
        _ACCEPTANCE[n] = f"criterion {n} [{name}]: {'PASS' if passed else 'FAIL'} ({detail})"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])

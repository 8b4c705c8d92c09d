import math

import numpy as np
import pytest

_CRITERIA = {}


def record_criterion(number, title, passed, detail=""):
    """Remember one acceptance result and print its line."""
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}: {title}"
    if detail:
        line += f" ({detail})"
    _CRITERIA[number] = line
    print(line)
    return passed


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[k])


def mean_and_se(values):
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


def rel_var(values):
    """Sample relative variance ``Var(X) / mean(X)^2``."""
    v = np.asarray(values, dtype=float)
    return float(v.var(ddof=1) / v.mean() ** 2)

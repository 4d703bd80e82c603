from __future__ import annotations

import numpy as np
import pytest

from plbdarboux.forms import LinearPerturbationForm, canonical
from plbdarboux.symplectic import SymplecticField
from plbdarboux.tower import Tower


@pytest.fixture
def running_field():
    """(1 + 0.3 x1) dx ^ dy on a single 2D level."""
    tw = Tower.inclusion(1, 2)
    return SymplecticField.uniform(tw, LinearPerturbationForm(canonical(2), 0, 0.3))


@pytest.fixture
def running_field_3():
    tw = Tower.inclusion(3, 2)
    return SymplecticField.uniform(tw, LinearPerturbationForm(canonical(2), 0, 0.3))


def random_spd(rng, d):
    A = rng.standard_normal((d, d))
    return A @ A.T + d * np.eye(d)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)

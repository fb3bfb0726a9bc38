from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rainbowpo.core import PreferencePair  # noqa: E402
from rainbowpo.policy import PolicyModel  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


def random_model(gen: np.random.Generator, n=4, C=2, T_max=5, scale=1.0) -> PolicyModel:
    return PolicyModel(gen.normal(0.0, scale, size=(C, n + 1, n)), T_max)


def random_seq(gen: np.random.Generator, n: int, T_max: int) -> tuple[int, ...]:
    length = int(gen.integers(1, T_max + 1))
    return tuple(int(t) for t in gen.integers(0, n, size=length))


def random_pairs(gen: np.random.Generator, model: PolicyModel, count: int, scores=False) -> list[PreferencePair]:
    out = []
    for _ in range(count):
        yw = random_seq(gen, model.n, model.T_max)
        yl = random_seq(gen, model.n, model.T_max)
        ctx = int(gen.integers(0, model.C))
        if scores:
            a, b = sorted(gen.normal(size=2))
            out.append(PreferencePair(ctx, yw, yl, float(b), float(a)))
        else:
            out.append(PreferencePair(ctx, yw, yl))
    return out


@pytest.fixture
def gen():
    return np.random.default_rng(1234)

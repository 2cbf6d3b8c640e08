from __future__ import annotations

import pytest

from bimilab.env import default_walkthrough, generate_gridseq, make_env, platform_room_from_map


@pytest.fixture
def small_grid():
    cfg = generate_gridseq(7, rows=1, cols=1, room_size=3, num_targets=2)
    return make_env(cfg)


@pytest.fixture
def three_rooms():
    cfg = generate_gridseq(7, rows=1, cols=3, room_size=4, num_targets=3, max_steps=150)
    return make_env(cfg)


@pytest.fixture
def platform():
    return make_env(platform_room_from_map(max_steps=200))


@pytest.fixture
def walkthrough_of():
    return lambda env: default_walkthrough(env.config)


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def report(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        request.config.stash[ACCEPTANCE_KEY].append((number, line))
        assert passed, line

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)

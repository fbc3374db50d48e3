import numpy as np
import pytest

from scrank import synthgen
from scrank.graph import DirectedGraph, unreciprocated


def random_digraph(n, m, reciprocity, seed):
    """Random simple digraph with roughly ``reciprocity`` of arcs paired."""
    rng = np.random.default_rng(seed)
    src = rng.integers(0, n, m)
    dst = rng.integers(0, n, m)
    back = rng.random(m) < reciprocity
    src2 = np.concatenate([src, dst[back]])
    dst2 = np.concatenate([dst, src[back]])
    return DirectedGraph.from_arcs(src2, dst2, n)


@pytest.fixture(scope="session")
def desk_instance():
    return synthgen.generate(synthgen.PRESETS["desk"].replace(seed=2024))


@pytest.fixture(scope="session")
def desk_arcs(desk_instance):
    return unreciprocated(desk_instance.graph)


_ACCEPTANCE: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    _ACCEPTANCE.append((name, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE:
        mark = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{mark}] {name}")

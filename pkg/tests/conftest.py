import numpy as np
import pytest

from hierclf.statespace import build_state_space
from hierclf.taxonomy import Taxonomy, parse_taxonomy

_ACCEPTANCE: list[tuple[str, str]] = []


def cub_like_text() -> str:
    """13 orders, 38 families, 200 species; ids level by level."""
    lines = ["# CUB-sized bird hierarchy"]
    for i in range(13):
        lines.append(f"{i}\t-\torder{i}")
    for j in range(38):
        lines.append(f"{13 + j}\t{j % 13}\tfamily{j}")
    for k in range(200):
        lines.append(f"{51 + k}\t{13 + k % 38}\tspecies{k}")
    return "\n".join(lines) + "\n"


@pytest.fixture
def toy():
    """A -> {B, C}."""
    return Taxonomy.from_parents([None, 0, 0], ["A", "B", "C"])


@pytest.fixture
def toy_ss(toy):
    return build_state_space(toy)


@pytest.fixture
def seven():
    """Three uniform levels: 0 -> {1, 2}, 1 -> {3, 4}, 2 -> {5, 6}."""
    return Taxonomy.from_parents([None, 0, 0, 1, 1, 2, 2])


@pytest.fixture(scope="session")
def cub():
    return parse_taxonomy(cub_like_text())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_c" not in report.nodeid:
        return
    # a fixture error never reaches the call phase, so record failed setups too
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE:
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}")

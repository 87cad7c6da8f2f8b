import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from kgexplore.kg import load_graph_dir, load_toykg, toykg_path  # noqa: E402

HERE = os.path.dirname(__file__)
FIXTURES = os.path.join(HERE, "fixtures")
GOLDENS = os.path.join(HERE, "goldens")

METEO_PROGRAM = (
    '(AND meteorology.tropical_cyclone (AND (JOIN meteorology.tropical_cyclone.category '
    '(JOIN meteorology.tropical_cyclone_category.tropical_cyclones "linda")) '
    '(JOIN meteorology.tropical_cyclone.affected_areas "turks")))'
)


@pytest.fixture(scope="session")
def toykg():
    return load_toykg()


@pytest.fixture(scope="session")
def toy_tsv():
    with open(os.path.join(toykg_path(), "triples.tsv"), encoding="utf-8") as fh:
        return fh.read()


@pytest.fixture(scope="session")
def meteo():
    return load_graph_dir(os.path.join(FIXTURES, "meteorology"))


def fixture_path(name):
    return os.path.join(FIXTURES, name)


def golden(name):
    with open(os.path.join(GOLDENS, name), encoding="utf-8") as fh:
        return fh.read()


# PASS/FAIL lines from the acceptance suite, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

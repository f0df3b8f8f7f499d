import sys
from pathlib import Path

import pytest

from refcalc.domain import parse_domain
from refcalc.syntax import parse_coupling, parse_derivation, parse_module, parse_program

FIXTURES = Path(__file__).resolve().parent.parent / "src" / "refcalc" / "fixtures"

# the domain each derivation script is checked over
SCRIPT_DOMAINS = {
    "sem_example.rcder": "nat30.rcdom",
    "sem_example_bad.rcder": "nat30.rcdom",
    "set_add_demonic.rcder": "small.rcdom",
    "laws_assume.rcder": "nat30.rcdom",
    "laws_scope.rcder": "nat30.rcdom",
    "laws_quant.rcder": "nat8.rcdom",
    "laws_choice.rcder": "nat30.rcdom",
    "laws_gendemon.rcder": "small.rcdom",
    "laws_procs.rcder": "nat30.rcdom",
}


def text(name):
    return (FIXTURES / name).read_text()


def domain(name):
    return parse_domain(text(name))


def program(name):
    return parse_program(text(name))


def module(name):
    return parse_module(text(name))


def coupling(name):
    return parse_coupling(text(name))


def derivation(name):
    return parse_derivation(text(name))


@pytest.fixture(scope="session")
def nat30():
    return domain("nat30.rcdom")


@pytest.fixture(scope="session")
def small():
    return domain("small.rcdom")


@pytest.fixture(scope="session")
def hash2():
    return domain("hash2.rcdom")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])

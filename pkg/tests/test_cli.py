import json
import subprocess
import sys

import pytest

from refcalc.syntax import alpha_equal, parse_module

from cli_cases import CASES, run_cli, run_json, without_timing
from conftest import FIXTURES, module


@pytest.mark.parametrize("argv,code", CASES, ids=[" ".join(a[:2]) for a, _ in CASES])
def test_exit_status(argv, code):
    assert run_cli(argv)[0] == code


@pytest.mark.parametrize("argv,code", CASES, ids=[" ".join(a[:2]) for a, _ in CASES])
def test_json_report_shape(argv, code):
    got, rep = run_json(argv)
    assert got == code
    assert rep["schema"] == 1 and rep["command"] == argv[0]
    assert rep["result"] == {0: "pass", 1: "fail"}[code]
    assert all(len(i["sha256"]) == 64 for i in rep["inputs"])
    assert set(rep["stats"]) == {"bindings_checked", "wall_ms", "domain_sizes"}
    assert isinstance(rep["obligations"], list)


def test_missing_file_is_a_usage_error():
    assert run_cli(["refines", "nosuch.rc", "other.rc"])[0] == 2


def test_parse_error_is_reported(tmp_path):
    bad = tmp_path / "bad.rc"
    bad.write_text("[X = ]")
    code, rep = run_json(["parse", str(bad)])
    assert code == 2 and rep["result"] == "error" and "ParseError" in rep["message"]


def test_unknown_extension_needs_kind(tmp_path):
    f = tmp_path / "prog.txt"
    f.write_text("[X = 1]")
    assert run_cli(["parse", str(f)])[0] == 2
    assert run_cli(["parse", str(f), "--kind", "rc"])[0] == 0


def test_budget_overflow_is_an_error():
    code, rep = run_json(["refines", "sem_example_lhs.rc", "sem_example_rhs.rc", "--domain",
                          "nat30.rcdom", "--budget", "10"])
    assert code == 2 and "budget" in rep["message"]


def test_fixture_round_trips():
    for p in sorted(FIXTURES.iterdir()):
        if p.suffix in (".rc", ".rcm", ".rcc", ".rcder", ".rcdom"):
            assert run_cli(["parse", str(p)])[0] == 0, p.name


def test_semantics_table_is_tab_separated():
    code, out = run_cli(["semantics", "sem_example_lhs.rc", "--domain", "nat30.rcdom"])
    lines = out.splitlines()
    assert lines[0] == "X\tY\tok\tef"
    assert len(lines) == 1 + 30 * 30
    rows = {tuple(line.split("\t")[:2]): tuple(line.split("\t")[2:]) for line in lines[1:]}
    assert rows[("5", "15")] == ("true", "true")
    assert rows[("4", "14")] == ("false", "true")


def test_symbolic_semantics():
    code, out = run_cli(["semantics", "sem_example_lhs.rc", "--symbolic"])
    assert code == 0 and out.startswith("ok\tX = 5")


def test_calculate_writes_module(tmp_path):
    dest = tmp_path / "hash.rcm"
    code, _ = run_cli(["calculate", "pfun.rcm", "--couple", "makehash.rcc", "--domain",
                       "hash2.rcdom", "-o", str(dest)])
    assert code == 0
    got, want = parse_module(dest.read_text()), module("hash.rcm")
    assert all(alpha_equal(p.body, want.proc(p.name).body) for p in got.procs)


def test_demonic_calculation_emits_choice():
    code, rep = run_json(["calculate", "set.rcm", "--couple", "ranci.rcc", "--domain",
                          "small.rcdom", "--demonic"])
    add = next(p for p in rep["procedures"] if p["procedure"] == "add")
    assert code == 0 and add["emitted"].startswith("dch X:listnat.(ran(X) = {E} cup ran(L) =>>")


def test_opaque_form_report_names_the_rule():
    _, rep = run_json(["opaque-form", "contains_rawspec.rc", "--module", "pfun.rcm"])
    ob = rep["obligations"][0]
    assert ob["rule"] == "form 1" and ob["path"] == [0, 1, 0, 1] and ob["iv"] == ["F", "F'"]
    _, rep = run_json(["opaque-form", "contains_reused.rc", "--module", "pfun.rcm"])
    assert rep["obligations"][0]["rule"] == "form 3"


def test_naive_check_counterexample_in_report():
    _, rep = run_json(["module-refines", "set.rcm", "setplus.rcm", "--couple", "ranci.rcc",
                       "--domain", "small.rcdom", "--naive", "add"])
    naive = rep["naive"][0]
    fwd = naive["abstract_refined_by_concrete"]
    assert fwd["verdict"] == "fails" and fwd["counterexample"]["L'"] == "[0, 0]"
    assert rep["result"] == "pass"


def test_replace_calls_answers():
    _, rep = run_json(["replace-calls", "contains.rc", "--module", "pfun.rcm", "--to", "hash.rcm",
                       "--domain", "hash3.rcdom"])
    assert rep["answers"] == {"original": [{"X": "2"}], "replaced": [{"X": "2"}]}


def test_laws_are_listed():
    code, rep = run_json(["laws"])
    names = [law["name"] for law in rep["laws"]]
    assert code == 0 and "gendemon_eliminate" in names and "equiv_specs_wrt" in names


def test_counterexample_for_sum_is_stable():
    _, rep = run_json(["refines", "sum3_lhs.rc", "sum3_rhs.rc", "--domain", "nat30.rcdom"])
    assert rep["obligations"][0]["counterexample"] == {"X": "17", "Y": "0", "Z": "17"}


@pytest.mark.parametrize("argv,code", CASES, ids=[" ".join(a[:2]) for a, _ in CASES])
def test_reports_do_not_depend_on_worker_count(argv, code):
    _, one = run_json(argv + ["--jobs", "1"])
    _, many = run_json(argv + ["--jobs", "8"])
    assert without_timing(one) == without_timing(many)


def test_console_script():
    out = subprocess.run([sys.executable, "-m", "refcalc.cli", "refines", "sem_example_lhs.rc",
                          "sem_example_rhs.rc", "--domain", "nat30.rcdom", "--json"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and json.loads(out.stdout)["result"] == "pass"

import random

import pytest
from hypothesis import given, settings, strategies as st

from refcalc.domain import FuelExhausted, LVal, parse_domain
from refcalc.semantics import DemonicError, Semantics
from refcalc.syntax import parse_command, parse_pred, parse_type, pp_command, subst_many
from refcalc.syntax.ast import (
    Assume, CExists, Demon, Iff, Lit, NamedT, Par, PTrue, Rel, Seq, Spec, Var,
)

from conftest import domain, program
from gen import rand_command, small_domain
from oracle import Oracle


def test_assumption_failure_means_abort(nat30):
    sem = Semantics(nat30)
    ok, _ = sem.ok_ef(parse_command("{X != 0}, [Y = X]"), {"X": 0, "Y": 0})
    assert ok is False


def test_failed_spec_makes_later_assumption_irrelevant(nat30):
    sem = Semantics(nat30)
    assert sem.ok_ef(parse_command("[X = 0], {Y = 1}"), {"X": 1, "Y": 0}) == (True, False)


def test_table_rows(nat30):
    sem = Semantics(nat30)
    b = {"X": 3, "Y": 4}
    rows = {
        "[X = 3]": (True, True), "{X = 4}": (False, True),
        "[X = 4] \\/ [Y = 4]": (True, True), "{X = 4} \\/ [Y = 4]": (False, True),
        "[X = 3] /\\ [Y = 3]": (True, False), "{X = 3}, [Y = 3]": (True, False),
        "ex X:num.([X = Y])": (True, True), "all X:num.([X = X])": (True, True),
        "all X:num.({X < 29})": (False, True),
    }
    for src, want in rows.items():
        assert sem.ok_ef(parse_command(src), b) == want, src


def test_reverse_unfolds(small):
    prog = program("reverse.rc")
    dom = domain("lists2.rcdom")
    sem = Semantics(dom, prog.procs, fuel=4)
    call = parse_command("reverse(L, R)")
    assert sem.ok_ef(call, {"L": LVal([0, 1]), "R": LVal([1, 0])})[1] is True
    assert sem.ok_ef(call, {"L": LVal([0, 1]), "R": LVal([0, 1])})[1] is False


def test_fuel_exhaustion_is_an_error():
    prog = program("reverse.rc")
    dom = domain("lists2.rcdom")
    sem = Semantics(dom, prog.procs, fuel=2)
    with pytest.raises(FuelExhausted):
        sem.ok_ef(parse_command("reverse(L, R)"), {"L": LVal([0, 1, 1]), "R": LVal([1, 1, 0])})


def test_example_refinement(nat30):
    s = program("sem_example_lhs.rc").command
    t = program("sem_example_rhs.rc").command
    rep = Semantics(nat30).refines(s, t)
    assert rep.holds
    assert Oracle(nat30, nat30.vars).refines(s, t) is None


def test_reflexive(nat30):
    s = program("sem_example_lhs.rc").command
    assert Semantics(nat30).refines(s, s).holds


def test_abort_on_target_fails_ok_clause(nat30):
    rep = Semantics(nat30).refines(parse_command("[Y = 1]"), parse_command("{X != 0}, [Y = 1]"))
    assert not rep.holds and rep.clause == "ok" and rep.counterexample["X"] == 0


def test_failure_binding_reproduces(nat30):
    s, t = parse_command("[Y = X + 1]"), parse_command("[Y = X + 1 /\\ X != 7]")
    sem = Semantics(nat30)
    rep = sem.refines(s, t)
    assert not rep.holds
    b = {"X": 0, "Y": 0, **rep.counterexample}
    ok_s, ef_s = sem.ok_ef(s, b)
    ok_t, ef_t = sem.ok_ef(t, b)
    assert ok_s and (not ok_t or ef_s != ef_t)


def test_reverse_in_context_of_difference_lists():
    prog = program("reverse.rc")
    other = program("reversedl.rc")
    dom = domain("lists2.rcdom")
    sem = Semantics(dom, prog.procs)
    a = parse_pred("R ++ DL2 = DL1")
    s, t = parse_command("reverse(L, R)"), parse_command("reversedl(L, DL1, DL2)")
    assert sem.refines_in_context(a, s, t).holds
    assert sem.refines_in_context(parse_pred("R = DL1 /\\ DL2 = []"), s, t).holds
    assert prog.command == parse_command("{R ++ DL2 = DL1}, reverse(L, R)")
    assert other.command == parse_command("{R ++ DL2 = DL1}, reversedl(L, DL1, DL2)")
    oracle = Oracle(dom, dom.vars, prog.procs)
    assert oracle.refines(prog.command, other.command) is None


def test_false_context_always_refines(nat30):
    sem = Semantics(nat30)
    assert sem.refines_in_context(parse_pred("false"), parse_command("[X = 1]"),
                                  parse_command("[Y = 2]")).holds


# ----- demonic choice -----

@pytest.fixture()
def bits():
    return parse_domain("type nat = nat<2>\ntype listnat = list<nat<2>, 3>\n"
                        "var E : nat\nvar L, L' : listnat")


def test_resolutions_of_representative_choice(bits):
    sem = Semantics(bits)
    c = parse_command("dch X:listnat.(ran(X) = {E} cup ran(L) =>> [L' = X])")
    res = sem.resolutions(c, {"E": 0, "L": LVal([1])})
    got = {pp_command(r) for r in res}
    assert "[L' = [0, 1]]" in got and "[L' = [1, 0]]" in got and "[L' = [0, 1, 1]]" in got
    # oracle: every list of length <= 3 whose elements are exactly {0, 1}
    want = [v for v in bits.carrier(parse_type("listnat")) if set(v) == {0, 1}]
    assert len(res) == len(want)


def test_binary_choice_and_magic(nat30):
    sem = Semantics(nat30)
    a, b = parse_command("[X = 1]"), parse_command("[X = 2]")
    assert sem.resolutions(parse_command("[X = 1] |~| [X = 2]")) == [a, b]
    assert sem.resolutions(parse_command("magic")) == []
    assert sem.refines(parse_command("[X = 1] |~| [X = 2]"), a).holds
    rep = sem.refines(parse_command("magic"), a)
    assert not rep.holds and "miracle" in rep.note


def test_demonic_add_resolves_to_cons(small):
    d = program("set_add_dch.rc")
    sem = Semantics(small, (), dict(d.vars))
    good = sem.refines(d.command, program("set_add_cons.rc").command)
    assert good.holds and good.witness["variable"] == "X"
    assert not sem.refines(d.command, program("set_add_keep.rc").command).holds


def test_empty_guard_is_reported(nat30):
    sem = Semantics(nat30, (), {"Z": parse_type("num")})
    rep = sem.refines(parse_command("dch Z:num.(Z < X /\\ X < Z =>> [Y = Z])"), parse_command("[Y = 0]"))
    assert not rep.holds and "empty guard" in rep.note


def test_demonic_on_both_sides_is_rejected(nat30):
    sem = Semantics(nat30)
    with pytest.raises(DemonicError):
        sem.refines(parse_command("[X = 1] |~| [X = 2]"), parse_command("[X = 1] |~| magic"))


def test_ok_of_demonic_is_undefined(nat30):
    with pytest.raises(DemonicError):
        Semantics(nat30).ok(parse_command("[X = 1] |~| [X = 2]"))


# ----- properties over generated commands -----

_seeds = st.integers(0, 2 ** 32 - 1)


@settings(max_examples=150, deadline=None)
@given(_seeds)
def test_ok_ef_match_direct_interpreter(seed):
    dom = small_domain()
    r = random.Random(seed)
    c = rand_command(r, 4)
    sem, oracle = Semantics(dom), Oracle(dom, dom.vars)
    okf, eff = sem.ev.pred(sem.ok(c)), sem.ev.pred(sem.ef(c))
    for b in oracle.bindings(parse_command("[X = Y /\\ B = B]")):
        assert okf(dict(b)) == oracle.ok(c, b)
        assert eff(dict(b)) == oracle.ef(c, b)


@settings(max_examples=150, deadline=None)
@given(_seeds)
def test_refines_matches_brute_force(seed):
    dom = small_domain()
    r = random.Random(seed)
    s, t = rand_command(r, 3), rand_command(r, 3)
    rep = Semantics(dom).refines(s, t)
    assert rep.holds == (Oracle(dom, dom.vars).refines(s, t) is None)


@settings(max_examples=100, deadline=None)
@given(_seeds)
def test_refeq_agrees_with_expanded_form(seed):
    dom = small_domain()
    r = random.Random(seed)
    s, t = rand_command(r, 3), rand_command(r, 3)
    sem = Semantics(dom)
    a, b = sem.refeq(s, t)
    ent = sem.entailment()
    expanded = (ent.check(PTrue(), [Iff(sem.ok(s), sem.ok(t))]).holds
                and ent.check(sem.ok(s), [Iff(sem.ef(s), sem.ef(t))]).holds)
    assert (a.holds and b.holds) == expanded


def _drop_assumption(c):
    """Removing a leading assumption is always a refinement."""
    if isinstance(c, Seq) and isinstance(c.lhs, Assume):
        return c.rhs
    return c


@settings(max_examples=60, deadline=None)
@given(_seeds)
def test_parallel_conjunction_is_monotone(seed):
    dom = small_domain()
    r = random.Random(seed)
    sem = Semantics(dom)
    a, b = rand_command(r, 2), rand_command(r, 2)
    a2, b2 = _drop_assumption(a), _drop_assumption(b)
    assert sem.refines(a, a2).holds and sem.refines(b, b2).holds
    assert sem.refines(Par(a, b), Par(a2, b2)).holds


@settings(max_examples=60, deadline=None)
@given(_seeds, st.integers(0, 4))
def test_one_point(seed, k):
    dom = small_domain()
    body = rand_command(random.Random(seed), 2)
    lhs = CExists("X", NamedT("n5"), Seq(Spec(Rel("=", Var("X"), Lit(k))), body))
    assert Semantics(dom).equivalent(lhs, subst_many(body, {"X": Lit(k)}))


@settings(max_examples=40, deadline=None)
@given(_seeds)
def test_demonic_refinement_is_monotone_in_target(seed):
    dom = small_domain()
    r = random.Random(seed)
    sem = Semantics(dom)
    a, b = rand_command(r, 2), rand_command(r, 2)
    d = Demon(a, b)
    assert sem.refines(d, a).holds
    t2 = _drop_assumption(a)
    assert sem.refines(a, t2).holds
    assert sem.refines(d, t2).holds

import random

import pytest
from hypothesis import given, settings, strategies as st

from refcalc.laws import LAWS, LawError, apply_law, check_derivation, collect_context, discharge
from refcalc.semantics import Semantics
from refcalc.syntax import (
    free_vars, parse_command, parse_derivation, parse_pred, parse_term, pp_pred,
)
from refcalc.syntax.ast import Assume, CExists, NamedT, PTrue, Seq, Spec, Var

from conftest import SCRIPT_DOMAINS, derivation, domain
from gen import rand_command, rand_pred, small_domain
from oracle import Oracle, brute_entails, law_discrepancies


# ----- context -----

def test_context_after_assumption():
    c = parse_command("{X = 5}, [Y = X + 10]")
    assert collect_context(c, [1]).pred == parse_pred("X = 5")


def test_context_after_specification():
    c = parse_command("[L = [H|T]], [R = T]")
    assert collect_context(c, [1]).pred == parse_pred("L = [H|T]")


def test_context_at_root_is_global_only():
    c = parse_command("{X = 5}, [Y = 1]")
    assert collect_context(c, [], parse_pred("Y < 3")).pred == parse_pred("Y < 3")
    assert collect_context(c, []).pred == PTrue()


def test_context_ignores_other_left_operands():
    c = parse_command("([X = 1] \\/ [X = 2]), [Y = X]")
    assert collect_context(c, [1]).pred == PTrue()


def test_context_forgets_bound_variable():
    c = parse_command("{X = 5 /\\ Y = 1}, ex X:nat<30>.([Y = X])")
    ctx = collect_context(c, [1, 0])
    assert ctx.pred == parse_pred("Y = 1") and "X" in ctx.env


def test_parallel_operands_inherit_context():
    c = parse_command("{X = 5}, ([Y = X] /\\ [Y = 5])")
    assert collect_context(c, [1, 0]).pred == collect_context(c, [1, 1]).pred == parse_pred("X = 5")


# ----- individual laws -----

def test_equiv_specs_in_context_obligation():
    c = parse_command("{X = 5}, [Y = X + 10]")
    app = apply_law(c, "equiv_specs_wrt", [1], {"Q": parse_pred("Y = 15")})
    assert app.after == parse_command("{X = 5}, [Y = 15]")
    [ob] = app.obligations
    assert ob.text() == "X = 5 |= (Y = X + 10 <=> Y = 15)"


def test_weaken_assumption_obligation(nat30):
    app = apply_law(parse_command("{X = 5 /\\ Y = 2}"), "weaken_ass", [], {"B": parse_pred("X = 5")})
    assert app.after == Assume(parse_pred("X = 5"))
    [ob] = app.obligations
    assert ob.text() == "X = 5 /\\ Y = 2 |= X = 5"
    assert discharge(ob, Semantics(nat30)).verdict == "discharged"


def test_strengthening_an_assumption_fails_its_obligation(nat30):
    app = apply_law(parse_command("{X = 5}"), "weaken_ass", [], {"B": parse_pred("X = 5 /\\ Y = 2")})
    ob = discharge(app.obligations[0], Semantics(nat30))
    assert ob.verdict == "failed" and ob.counterexample["X"] == 5 and ob.counterexample["Y"] != 2


def test_structural_laws_emit_no_obligations():
    for law, src, path in [("lift_disj", "[X = 1 \\/ X = 2]", []),
                           ("lift_conj", "[X = 1 /\\ Y = 2]", []),
                           ("dist_seq_disj", "{X = 1}, ([Y = 1] \\/ [Y = 2])", []),
                           ("remove_ass", "{X = 1}, [Y = 1]", [])]:
        assert apply_law(parse_command(src), law, path).obligations == [], law


def test_shape_mismatch_is_rejected():
    with pytest.raises(LawError):
        apply_law(parse_command("[X = 1]"), "lift_disj", [])


def test_missing_argument_is_rejected():
    with pytest.raises(LawError):
        apply_law(parse_command("[X = 1]"), "equiv_specs", [])


def test_one_point_side_condition():
    with pytest.raises(LawError):
        apply_law(parse_command("ex X:nat<5>.([X = X + 1], [Y = X])"), "one_point", [])
    app = apply_law(parse_command("ex X:nat<5>.([X = Y], [Z = X])"), "one_point", [])
    assert app.after == parse_command("[Z = Y]")
    assert pp_pred(app.obligations[0].goal) == "Y in nat<5>"


def test_scope_laws_check_freshness():
    with pytest.raises(LawError):
        apply_law(parse_command("[X = 1], ex X:nat<3>.([Y = X])"), "extend_scope", [])
    with pytest.raises(LawError):
        apply_law(parse_command("ex X:nat<3>.([X = 1], [Y = X])"), "shrink_scope", [])


def test_gendemon_eliminate_on_representative_choice(small):
    d = derivation("set_add_demonic.rcder")
    app = apply_law(d.start, "gendemon_eliminate", [], {"U": parse_term("[E|L]")})
    assert app.after == d.steps[0].expect
    goals = [pp_pred(ob.goal) for ob in app.obligations]
    assert goals == ["ran([E|L]) = {E} cup ran(L)", "[E|L] in listnat"]


def test_gendemon_intro_soundness(small):
    # every value allowed by the guard gives a command the original refines to
    d = derivation("laws_gendemon.rcder")
    sem = Semantics(small, (), dict(d.vars))
    rep = check_derivation(d, small, sem=sem)
    intro = rep.steps[0].after
    oracle = Oracle(small, {**small.vars, **dict(d.vars)})
    assert oracle.refined_by_demonic(d.start, intro) is None
    assert sem.refines(intro, parse_command("{E notin ran(L)}, [L' = [E|L]]")).holds


def test_context_rules_cannot_be_applied_directly():
    with pytest.raises(LawError):
        apply_law(parse_command("[X = 1]"), "mono", [])


def test_every_law_describes_itself():
    for law in LAWS.values():
        assert law.describe().startswith(law.name)


# ----- derivation scripts -----

def test_example_derivation_passes(nat30):
    rep = check_derivation(derivation("sem_example.rcder"), nat30)
    assert rep.passed
    assert rep.result == parse_command("[Y = 15] \\/ [Y = 25]")
    texts = [ob.text() for ob in rep.obligations]
    assert texts == ["X = 5 |= (Y = X + 10 <=> Y = 15)", "X = 5 |= (Y = X + 20 <=> Y = 25)"]
    assert all(ob.verdict == "discharged" for ob in rep.obligations)


def test_wrong_constant_fails_with_counterexample(nat30):
    rep = check_derivation(derivation("sem_example_bad.rcder"), nat30)
    assert not rep.passed
    last = rep.steps[-1]
    assert last.law == "ctx_ass_spec" and not last.passed
    ob = last.obligations[0]
    assert ob.verdict == "failed"
    # first failing binding in enumeration order, found independently
    want = brute_entails(nat30, nat30.vars, ob.context, ob.goal)
    assert want == {"X": 5, "Y": 15}
    assert ob.counterexample == want


def test_empty_script_passes(nat30):
    d = parse_derivation("var Z : num\nderive\nstart: [Z = X]\nend")
    rep = check_derivation(d, nat30)
    assert rep.passed and rep.result == rep.start and rep.steps == []


def test_expectation_mismatch_is_reported(nat30):
    d = parse_derivation("derive\nstart: [X = 1 \\/ X = 2]\n"
                         "step apply lift_disj at []\n  expect: [X = 2] \\/ [X = 1]\nend")
    rep = check_derivation(d, nat30)
    assert not rep.passed and "expected" in rep.steps[0].message


def test_failed_semantic_step_reports_refinement(nat30):
    d = parse_derivation("derive\nstart: [X = 1]\nstep semantic\n  expect: [X = 2]\nend")
    rep = check_derivation(d, nat30)
    assert not rep.passed and rep.steps[0].refinement is not None


@pytest.mark.parametrize("name", sorted(SCRIPT_DOMAINS))
def test_law_steps_are_sound(name):
    rep, n, bad = law_discrepancies(derivation(name), domain(SCRIPT_DOMAINS[name]))
    assert n > 0 and bad == []


def test_all_fixture_scripts_have_a_domain():
    from conftest import FIXTURES
    assert {p.name for p in FIXTURES.glob("*.rcder")} == set(SCRIPT_DOMAINS)


def test_oracle_catches_an_unsound_step(nat30):
    oracle = Oracle(nat30, nat30.vars)
    assert oracle.refines(parse_command("{X = 5}, [Y = 1]"),
                          parse_command("{X = 5 /\\ Y = 2}, [Y = 1]")) is not None


# ----- random law applications -----

_seeds = st.integers(0, 2 ** 32 - 1)


@settings(max_examples=80, deadline=None)
@given(_seeds)
def test_weaken_and_remove_are_refinements(seed):
    dom = small_domain()
    r = random.Random(seed)
    a, body = rand_pred(r), rand_command(r, 2)
    c = Seq(Assume(a), body)
    sem = Semantics(dom)
    oracle = Oracle(dom, dom.vars)
    after = apply_law(c, "remove_ass", []).after
    assert oracle.refines(c, after) is None
    b = rand_pred(r)
    app = apply_law(c, "weaken_ass", [0], {"B": b})
    if discharge(app.obligations[0], sem).verdict == "discharged":
        assert oracle.refines(c, app.after) is None


@settings(max_examples=80, deadline=None)
@given(_seeds)
def test_context_soundness(seed):
    dom = small_domain()
    r = random.Random(seed)
    sem = Semantics(dom)
    oracle = Oracle(dom, dom.vars)
    c = Seq(Spec(rand_pred(r)), Seq(Assume(rand_pred(r)), Spec(rand_pred(r))))
    app = apply_law(c, "ctx_ass_spec", [1], {"Q": rand_pred(r)})
    if discharge(app.obligations[0], sem).verdict == "discharged":
        assert oracle.refines(c, app.after) is None


@settings(max_examples=60, deadline=None)
@given(_seeds)
def test_scope_moves_are_equivalences(seed):
    dom = small_domain()
    r = random.Random(seed)
    s, t = rand_command(r, 1), rand_command(r, 1)
    if "X" in free_vars(s):
        return
    c = Seq(s, CExists("X", NamedT("n5"), t))
    out = apply_law(c, "extend_scope", []).after
    oracle = Oracle(dom, dom.vars)
    assert oracle.refines(c, out) is None and oracle.refines(out, c) is None
    assert apply_law(out, "shrink_scope", []).after == c


def test_intro_rejects_a_choice_variable_free_in_the_command(small):
    with pytest.raises(LawError):
        apply_law(parse_command("[X = 1]"), "gendemon_intro", [],
                  {"X": Var("X"), "T": None, "G": PTrue(), "S": parse_command("[X = 1]")},
                  sem=Semantics(small))

"""Calculating a concrete module from an abstract module and a coupling invariant.

For a procedure ``{A},[P]`` with regular formals V, opaque inputs I and
opaque outputs O, the calculated concrete procedure over V, I+ and O+ is

    {ex I. CI(I,I+) /\\ A}, [all I. CI(I,I+) /\\ A => ex O. P /\\ CI(O,O+)]

with the obvious degenerate forms when there are no inputs or no outputs.
The result still mentions the abstract type, so a simplifier removes it.
Every simplification stage is checked by enumeration and undone when the
check fails; nothing unverified is ever emitted.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .domain import (
    BudgetExceeded, DomainConfig, EvalError, Entailment, Evaluator, FuelExhausted, OutOfDomain,
    format_binding, format_value, split_conj, defining_eq,
)
from .modules import (
    ModuleError, apply_ci, bind_module_types, ci_pointwise,
)
from .semantics import conj, mk_and, mk_implies
from .syntax import (
    And, App, Assume, Comp, Cons, Coupling, GenDemon, Iff, Implies, Is, Lit, MapLit, ModuleDecl,
    NamedT, Nil, Not, Or, Param, PExists, PFalse, PForall, Pred, ProcedureDef, PTrue, Rel, Seq,
    SetLit, ShapeError, Spec, Term, Tup, TypeExpr, Var, alpha_equal, free_vars, fresh_name,
    pp_pred, subst_many,
)
from .syntax.ast import Lemma, split_shape


# ----- generic traversal -----

def map_pred(p: Pred, f: Callable[[Pred], Pred]) -> Pred:
    """Rebuild p bottom-up, applying f to every predicate node."""
    match p:
        case And(a, b) | Or(a, b) | Implies(a, b) | Iff(a, b):
            p = type(p)(map_pred(a, f), map_pred(b, f))
        case Not(b):
            p = Not(map_pred(b, f))
        case PExists(v, ty, b) | PForall(v, ty, b):
            p = type(p)(v, ty, map_pred(b, f))
    return f(p)


def map_term(t: Term, f: Callable[[Term], Term]) -> Term:
    match t:
        case Tup(items):
            t = Tup(tuple(map_term(i, f) for i in items))
        case SetLit(items):
            t = SetLit(tuple(map_term(i, f) for i in items))
        case Cons(h, tl):
            t = Cons(map_term(h, f), map_term(tl, f))
        case MapLit(pairs):
            t = MapLit(tuple((map_term(k, f), map_term(v, f)) for k, v in pairs))
        case App(fn, args):
            t = App(fn, tuple(map_term(a, f) for a in args))
        case Comp(pat, src, body):
            src = src if isinstance(src, TypeExpr) else map_term(src, f)
            t = Comp(pat, src, map_term(body, f))
    return f(t)


def terms_in(p: Pred, f: Callable[[Term], Term]) -> Pred:
    """Apply a term rewrite to the terms directly inside an atomic predicate."""
    match p:
        case Rel(op, a, b):
            return Rel(op, map_term(a, f), map_term(b, f))
        case Is(t, ty):
            return Is(map_term(t, f), ty)
    return p


def map_with_facts(p: Pred, f: Callable[[Pred, list], Pred], facts: list,
                   siblings: bool) -> Pred:
    """Top-down rewrite where f sees the facts known at each atomic position.

    Antecedents of implications are facts for their consequents; with
    ``siblings`` the other conjuncts of a conjunction are facts as well.
    Facts mentioning a variable are forgotten below its binder.
    """
    match p:
        case Implies(a, b):
            a2 = map_with_facts(a, f, facts, siblings)
            return Implies(a2, map_with_facts(b, f, facts + split_conj(a2), siblings))
        case And():
            cs = split_conj(p)
            out = []
            for i, c in enumerate(cs):
                extra = [d for j, d in enumerate(cs) if j != i] if siblings else []
                out.append(map_with_facts(c, f, facts + extra, siblings))
            return conj(out)
        case Or(a, b) | Iff(a, b):
            return type(p)(map_with_facts(a, f, facts, siblings), map_with_facts(b, f, facts, siblings))
        case Not(b):
            return Not(map_with_facts(b, f, facts, siblings))
        case PExists(v, ty, b) | PForall(v, ty, b):
            kept = [x for x in facts if v not in free_vars(x)]
            return type(p)(v, ty, map_with_facts(b, f, kept, siblings))
    return f(p, facts)


# ----- matching for lemmas -----

def match(pat, target, metas: set[str], sub: dict) -> Optional[dict]:
    """Extend sub so that pat[sub] is alpha-equal to target, or None."""
    if isinstance(pat, Var) and pat.name in metas:
        if pat.name in sub:
            return sub if alpha_equal(sub[pat.name], target) else None
        if not isinstance(target, Term):
            return None
        return {**sub, pat.name: target}
    if not (free_vars(pat) & metas):
        return sub if alpha_equal(pat, target) else None
    if type(pat) is not type(target):
        return None
    match pat:
        case App(fn, args):
            if fn != target.fn or len(args) != len(target.args):
                return None
            return _match_all(args, target.args, metas, sub)
        case Tup(items) | SetLit(items):
            if len(items) != len(target.items):
                return None
            return _match_all(items, target.items, metas, sub)
        case Cons(h, t):
            return _match_all((h, t), (target.head, target.tail), metas, sub)
        case Rel(op, a, b):
            if op != target.op:
                return None
            return _match_all((a, b), (target.lhs, target.rhs), metas, sub)
        case Is(t, ty):
            if ty != target.type:
                return None
            return match(t, target.term, metas, sub)
        case Not(b):
            return match(b, target.body, metas, sub)
        case And(a, b) | Or(a, b) | Implies(a, b) | Iff(a, b):
            return _match_all((a, b), (target.lhs, target.rhs), metas, sub)
    return None


def _match_all(pats, targets, metas, sub):
    for p, t in zip(pats, targets):
        sub = match(p, t, metas, sub)
        if sub is None:
            return None
    return sub


@dataclass
class RewriteRule:
    """A verified lemma used left to right."""
    lemma: Lemma
    metas: frozenset
    lhs: object
    rhs: object
    cond: Optional[Pred] = None
    kind: str = "term"                  # "term" | "pred"

    def text(self) -> str:
        return pp_pred(self.lemma.pred)


def rules_from_lemma(lem: Lemma) -> list[RewriteRule]:
    metas = frozenset(n for n, _ in lem.params)
    p, cond = lem.pred, None
    if isinstance(p, Implies):
        cond, p = p.lhs, p.rhs
    if isinstance(p, Rel) and p.op == "=":
        if isinstance(p.lhs, Var) and p.lhs.name in metas:
            return []
        return [RewriteRule(lem, metas, p.lhs, p.rhs, cond, "term")]
    if isinstance(p, Iff):
        return [RewriteRule(lem, metas, p.lhs, p.rhs, cond, "pred")]
    return []


# ----- verification -----

class Verifier:
    """Equivalence of predicates under a hypothesis, by enumeration."""

    def __init__(self, dom: DomainConfig, env: dict[str, TypeExpr], budget: Optional[int]):
        self.ent = Entailment(dom, env, budget=budget)
        self.checked = 0

    def equivalent(self, hyp: Pred, a: Pred, b: Pred):
        try:
            res = self.ent.check(hyp, [Iff(a, b)])
        except (BudgetExceeded, EvalError, FuelExhausted) as e:
            return False, None, str(e)
        self.checked += res.checked
        return res.holds, res.counterexample, None

    def entails(self, hyp: Pred, goal: Pred):
        res = self.ent.check(hyp, [goal])
        self.checked += res.checked
        return res


# ----- the simplifier -----

@dataclass
class SimpStep:
    stage: str
    kept: bool
    result: str
    reason: Optional[str] = None

    def to_json(self) -> dict:
        out = {"stage": self.stage, "kept": self.kept, "result": self.result}
        if self.reason:
            out["reason"] = self.reason
        return out


def one_point(p: Pred) -> Pred:
    def step(q: Pred) -> Pred:
        match q:
            case PExists(v, ty, body):
                cs = split_conj(body)
                for i, c in enumerate(cs):
                    t = defining_eq(c, v)
                    if t is None:
                        continue
                    rest = [subst_many(d, {v: t}) for j, d in enumerate(cs) if j != i]
                    guard = [Is(t, ty)] if ty is not None else []
                    return conj(guard + rest)
            case PForall(v, ty, Implies(ant, cons)):
                cs = split_conj(ant)
                for i, c in enumerate(cs):
                    t = defining_eq(c, v)
                    if t is None:
                        continue
                    rest = [subst_many(d, {v: t}) for j, d in enumerate(cs) if j != i]
                    guard = [Is(t, ty)] if ty is not None else []
                    return mk_implies(conj(guard + rest), subst_many(cons, {v: t}))
        return q
    return map_pred(p, step)


def _empty(t) -> bool:
    return isinstance(t, SetLit) and not t.items


def algebra(p: Pred) -> Pred:
    def term(t: Term) -> Term:
        match t:
            case Comp(_, src, _) if not isinstance(src, TypeExpr) and _empty(src):
                return SetLit(())
            case App("(+)" | "cup", (a, b)) if _empty(b):
                return a
            case App("(+)" | "cup", (a, b)) if _empty(a):
                return b
        return t

    def pred(q: Pred) -> Pred:
        q = terms_in(q, term)
        match q:
            case Rel("=", a, b) if alpha_equal(a, b):
                return PTrue()
            case And(a, b):
                return mk_and(a, b)
            case Implies(a, b):
                return mk_implies(a, b)
            case PExists(v, _, b) | PForall(v, _, b) if isinstance(b, (PTrue, PFalse)):
                return b
        return q
    return map_pred(p, pred)


def rewrite_with_lemmas(p: Pred, rules: Sequence[RewriteRule]) -> Pred:
    term_rules = [r for r in rules if r.kind == "term"]
    pred_rules = [r for r in rules if r.kind == "pred"]

    def at(q: Pred, facts: list) -> Pred:
        def term(t: Term) -> Term:
            for r in term_rules:
                sub = match(r.lhs, t, set(r.metas), {})
                if sub is None or not (free_vars(r.rhs) & r.metas) <= set(sub):
                    continue
                if r.cond is not None:
                    want = subst_many(r.cond, sub)
                    if not any(alpha_equal(want, fct) for fct in facts):
                        continue
                return subst_many(r.rhs, sub)
            return t
        return terms_in(q, term)

    p = map_with_facts(p, at, [], siblings=True)

    def pstep(q: Pred) -> Pred:
        for r in pred_rules:
            if r.cond is not None:
                continue
            sub = match(r.lhs, q, set(r.metas), {})
            if sub is not None and (free_vars(r.rhs) & r.metas) <= set(sub):
                return subst_many(r.rhs, sub)
        return q
    return map_pred(p, pstep)


def _replace_known(q: Pred, facts: list) -> Pred:
    """Replace a term t by X wherever a fact X = t is known (X a variable)."""
    eqs = []
    for fct in facts:
        if isinstance(fct, Rel) and fct.op == "=":
            for x, t in ((fct.lhs, fct.rhs), (fct.rhs, fct.lhs)):
                if isinstance(x, Var) and not isinstance(t, (Var, Lit)) and x.name not in free_vars(t):
                    eqs.append((t, x))
    if not eqs or any(alpha_equal(q, fct) for fct in facts):
        return q

    def term(t: Term) -> Term:
        for src, x in eqs:
            if alpha_equal(src, t):
                return x
        return t
    return terms_in(q, term)


def assumption_rewrite(p: Pred) -> Pred:
    """Inside ``A => B``, replace t by X in B when A has the conjunct X = t."""
    return map_with_facts(p, _replace_known, [], siblings=False)


def propagate_equalities(p: Pred) -> Pred:
    """In ``e /\\ X = t``, replace t by X inside e."""
    def at(q: Pred, facts: list) -> Pred:
        if isinstance(q, Rel) and q.op == "=" and (isinstance(q.lhs, Var) or isinstance(q.rhs, Var)):
            return q
        return _replace_known(q, facts)
    return map_with_facts(p, at, [], siblings=True)


def drop_quantifiers(p: Pred) -> Pred:
    """Drop universal binders (and then antecedents) the conclusion no longer needs."""
    match p:
        case PForall(v, _, Implies(_, cons)) if v not in free_vars(cons):
            return drop_quantifiers(cons)
        case PForall(v, _, body) if v not in free_vars(body):
            return drop_quantifiers(body)
        case Implies(_, cons):
            return cons
    return p


@dataclass
class SimplifyResult:
    pred: Pred
    steps: list[SimpStep]


class Simplifier:
    """Verify-or-revert simplification of a predicate under a hypothesis."""

    STAGES = (("one-point", one_point), ("algebra", algebra), ("lemmas", None),
              ("assumption rewriting", assumption_rewrite),
              ("equality propagation", propagate_equalities),
              ("drop quantifiers", drop_quantifiers), ("drop guards", None))

    def __init__(self, verifier: Verifier, rules: Sequence[RewriteRule] = (), max_rounds: int = 6):
        self.v = verifier
        self.rules = list(rules)
        self.max_rounds = max_rounds

    def simplify(self, p: Pred, hyp: Pred) -> SimplifyResult:
        cur = p
        steps: list[SimpStep] = []
        for _ in range(self.max_rounds):
            start = cur
            for name, fn in self.STAGES:
                if name == "drop guards":
                    cur = self._drop_guards(cur, hyp, steps)
                    continue
                cand = rewrite_with_lemmas(cur, self.rules) if fn is None else fn(cur)
                if alpha_equal(cand, cur):
                    continue
                ok, cex, err = self.v.equivalent(hyp, cur, cand)
                if ok:
                    cur = cand
                    steps.append(SimpStep(name, True, pp_pred(cur)))
                else:
                    why = err or ("not equivalent at " + format_binding(cex) if cex else "not equivalent")
                    steps.append(SimpStep(name, False, pp_pred(cand), why))
            if alpha_equal(cur, start):
                break
        return SimplifyResult(cur, steps)

    def _drop_guards(self, p: Pred, hyp: Pred, steps: list) -> Pred:
        """Remove guards on compound terms (left behind by one-point) that are redundant.

        Guards on plain variables are kept: they are the procedure's own typing.
        """
        cur = p
        k = 0
        while True:
            cand, found = _without_guard(cur, k)
            if not found:
                break
            cand = algebra(cand)
            ok, _, _ = self.v.equivalent(hyp, cur, cand)
            if ok:
                cur = cand
            else:
                k += 1
        if not alpha_equal(cur, p):
            steps.append(SimpStep("drop guards", True, pp_pred(cur)))
        return cur


def _without_guard(p: Pred, k: int) -> tuple[Pred, bool]:
    """p with its k-th compound type-membership atom (in tree order) replaced by true."""
    count = [0]
    hit = [False]

    def go(q: Pred) -> Pred:
        match q:
            case Is(t) if not isinstance(t, Var):
                i = count[0]
                count[0] += 1
                if i == k:
                    hit[0] = True
                    return PTrue()
                return q
            case And(a, b) | Or(a, b) | Implies(a, b) | Iff(a, b):
                return type(q)(go(a), go(b))
            case PExists(v, ty, b) | PForall(v, ty, b):
                return type(q)(v, ty, go(b))
        return q
    out = go(p)
    return out, hit[0]


# ----- procedure shapes -----

@dataclass
class ProcShape:
    proc: ProcedureDef
    regs: list[Param]
    ins: list[Param]
    outs: list[Param]
    ins_c: list[str]
    outs_c: list[str]
    assumption: Pred
    spec: Pred
    conc_type: NamedT

    @property
    def kind(self) -> str:
        return self.proc.kind

    def conc_params(self) -> tuple[Param, ...]:
        names = dict(zip([q.name for q in self.ins + self.outs], self.ins_c + self.outs_c))
        return tuple(Param(names.get(q.name, q.name), self.conc_type if q.mode != "reg" else q.type, q.mode)
                     for q in self.proc.params)

    def env_conc(self) -> dict[str, TypeExpr]:
        return {q.name: q.type for q in self.conc_params()}

    def env_abs(self) -> dict[str, TypeExpr]:
        return {q.name: q.type for q in self.proc.params}


def concrete_name(name: str, ci: Coupling, taken: set[str]) -> str:
    a, c = ci.abs_var, ci.conc_var
    cand = c + name[len(a):] if name.startswith(a) else c + name
    if cand in taken:
        cand = fresh_name(cand, taken)
    return cand


def proc_shape(p: ProcedureDef, ci: Coupling) -> ProcShape:
    try:
        a, sp = split_shape(p.body)
    except ShapeError:
        raise ModuleError(f"procedure {p.name} is not of the form {{A}},[P]") from None
    regs, ins, outs = list(p.by_mode("reg")), list(p.by_mode("in")), list(p.by_mode("out"))
    taken = set(p.formals)
    ins_c, outs_c = [], []
    for q in ins:
        ins_c.append(concrete_name(q.name, ci, taken))
        taken.add(ins_c[-1])
    for q in outs:
        outs_c.append(concrete_name(q.name, ci, taken))
        taken.add(outs_c[-1])
    return ProcShape(p, regs, ins, outs, ins_c, outs_c, a, sp, NamedT(ci.conc_type))


def _ex(params: Sequence[Param], body: Pred) -> Pred:
    for q in reversed(params):
        body = PExists(q.name, q.type, body)
    return body


def _all(params: Sequence[Param], body: Pred) -> Pred:
    for q in reversed(params):
        body = PForall(q.name, q.type, body)
    return body


def general_form(sh: ProcShape, ci: Coupling) -> tuple[Pred, Pred]:
    """(assumption, specification) of the calculated concrete procedure."""
    ci_in = ci_pointwise(ci, [q.name for q in sh.ins], sh.ins_c)
    ci_out = ci_pointwise(ci, [q.name for q in sh.outs], sh.outs_c)
    result = _ex(sh.outs, mk_and(sh.spec, ci_out)) if sh.outs else sh.spec
    if not sh.ins:
        return sh.assumption, result
    hyp = mk_and(ci_in, sh.assumption)
    return _ex(sh.ins, hyp), _all(sh.ins, Implies(hyp, result))


def make_proc(name: str, params: tuple[Param, ...], a: Pred, p: Pred) -> ProcedureDef:
    body = Spec(p) if isinstance(a, PTrue) else Seq(Assume(a), Spec(p))
    return ProcedureDef(name, params, body)


# ----- side conditions -----

@dataclass
class SideCondition:
    verdict: str                     # "holds" | "fails" | "vacuous" | "error"
    counterexample: Optional[dict] = None
    note: str = ""
    checked: int = 0

    @property
    def ok(self) -> bool:
        return self.verdict in ("holds", "vacuous")

    def to_json(self) -> dict:
        return {"verdict": self.verdict,
                "counterexample": None if self.counterexample is None else
                {k: format_value(v) for k, v in self.counterexample.items()},
                "note": self.note or None}


def _run(dom, env, hyp, goal, budget) -> SideCondition:
    try:
        res = Entailment(dom, env, budget=budget).check(hyp, [goal])
    except BudgetExceeded:
        return SideCondition("error", note="enumeration budget exceeded")
    except (EvalError, FuelExhausted) as e:
        return SideCondition("error", note=str(e))
    if res.holds:
        return SideCondition("holds", checked=res.checked)
    return SideCondition("fails", res.counterexample, checked=res.checked)


def check_ci_output(p: ProcedureDef, ci: Coupling, dom: DomainConfig, *,
                    budget: Optional[int] = None) -> SideCondition:
    """CI(I,I+) /\\ A /\\ P entails that every output has a concrete representation."""
    sh = proc_shape(p, ci)
    if not sh.outs:
        return SideCondition("vacuous", note="no opaque outputs")
    ci_in = ci_pointwise(ci, [q.name for q in sh.ins], sh.ins_c)
    hyp = conj([ci_in, sh.assumption, sh.spec])
    conc_outs = [Param(n, sh.conc_type, "out") for n in sh.outs_c]
    goal = _ex(conc_outs, ci_pointwise(ci, [q.name for q in sh.outs], sh.outs_c))
    env = {**sh.env_abs(), **{n: sh.conc_type for n in sh.ins_c}}
    return _run(dom, env, hyp, goal, budget)


def check_free_constraint(p: ProcedureDef, ci: Coupling, dom: DomainConfig, *,
                          budget: Optional[int] = None) -> SideCondition:
    """Whether ex O. P /\\ CI(O,O+) is independent of the abstract input I.

    Decided by comparing any two abstract inputs I1, I2 that both satisfy
    CI(Ik,I+) /\\ A at the same regular values and concrete input.
    """
    sh = proc_shape(p, ci)
    if not sh.ins:
        return SideCondition("vacuous", note="no opaque inputs")
    taken = set(sh.proc.formals) | set(sh.ins_c) | set(sh.outs_c) | set(dom.consts)
    copies = []
    for _ in range(2):
        names = {}
        for q in sh.ins:
            n = fresh_name(q.name, taken)
            taken.add(n)
            names[q.name] = n
        copies.append(names)
    outs = [q.name for q in sh.outs]
    body = _ex(sh.outs, mk_and(sh.spec, ci_pointwise(ci, outs, sh.outs_c))) if sh.outs else sh.spec
    hyps, sides = [], []
    for names in copies:
        ren = {k: Var(v) for k, v in names.items()}
        hyps.append(mk_and(ci_pointwise(ci, list(names.values()), sh.ins_c), subst_many(sh.assumption, ren)))
        sides.append(subst_many(body, ren))
    env = {q.name: q.type for q in sh.regs}
    env.update({n: sh.conc_type for n in sh.ins_c + sh.outs_c})
    for names in copies:
        env.update({v: q.type for q, v in zip(sh.ins, names.values())})
    rc = _run(dom, env, conj(hyps), Iff(sides[0], sides[1]), budget)
    if rc.verdict == "fails":
        pairs = ", ".join(f"{q.name}: {format_value(rc.counterexample[copies[0][q.name]])} vs "
                          f"{format_value(rc.counterexample[copies[1][q.name]])}" for q in sh.ins
                          if copies[0][q.name] in rc.counterexample)
        rc.note = f"the answer depends on the abstract input ({pairs})"
    return rc


# ----- classification -----

@dataclass
class CiClass:
    abstraction: bool
    concretisation: bool
    af: Optional[Term] = None       # abstract value as a term in the concrete variable
    cf: Optional[Term] = None       # concrete value as a term in the abstract variable
    pairs: int = 0
    abs_size: int = 0
    conc_size: int = 0
    table: dict = field(default_factory=dict, repr=False)

    @property
    def kind(self) -> str:
        if self.concretisation and self.abstraction:
            return "OneToOne"
        if self.abstraction:
            return "AbstractionFn"
        if self.concretisation:
            return "ConcretisationFn"
        return "Relational"

    def to_json(self) -> dict:
        return {"kind": self.kind, "abstraction_fn": self.abstraction,
                "concretisation_fn": self.concretisation,
                "af": None if self.af is None else pp_pred(Rel("=", Var("_"), self.af)).split(" = ", 1)[1],
                "cf": None if self.cf is None else pp_pred(Rel("=", Var("_"), self.cf)).split(" = ", 1)[1],
                "related_pairs": self.pairs, "abstract_values": self.abs_size,
                "concrete_values": self.conc_size}


def classify_ci(ci: Coupling, dom: DomainConfig) -> CiClass:
    """Which direction the coupling invariant is functional in, over the full carriers."""
    a_ty, c_ty = NamedT(ci.abs_type), NamedT(ci.conc_type)
    env = {ci.abs_var: a_ty, ci.conc_var: c_ty}
    ev = Evaluator(dom, env)
    holds = ev.pred(ci.pred)
    a_vals, c_vals = dom.carrier(a_ty), dom.carrier(c_ty)
    related: list[tuple] = []
    for c in c_vals:
        for a in a_vals:
            if holds({ci.abs_var: a, ci.conc_var: c}):
                related.append((a, c))
    by_c: dict = {}
    by_a: dict = {}
    for a, c in related:
        by_c.setdefault(c, []).append(a)
        by_a.setdefault(a, []).append(c)
    absfn = all(len(v) <= 1 for v in by_c.values())
    concfn = all(len(v) <= 1 for v in by_a.values())
    out = CiClass(absfn, concfn, pairs=len(related), abs_size=len(a_vals), conc_size=len(c_vals))
    if absfn:
        out.table = {c: v[0] for c, v in by_c.items()}
        out.af = _function_term(ci.pred, ci.abs_var, ci.conc_var, related, ev, 0)
    if concfn:
        out.cf = _function_term(ci.pred, ci.conc_var, ci.abs_var, related, ev, 1)
    return out


def _function_term(pred: Pred, target: str, source: str, related, ev: Evaluator, idx: int):
    """A conjunct ``target = t(source)`` whose term agrees with the graph."""
    for c in split_conj(pred):
        t = defining_eq(c, target)
        if t is None or free_vars(t) - {source} - set(ev.dom.consts):
            continue
        fn = ev.term(t)
        try:
            if all(fn({source: pair[1 - idx]}) == pair[idx] for pair in related):
                return t
        except OutOfDomain:
            continue
    return None


def is_deterministic(p: ProcedureDef, dom: DomainConfig, *, budget: Optional[int] = None) -> Optional[bool]:
    """Exactly one output for every admissible input; None for observers."""
    outs = p.by_mode("out")
    if not outs:
        return None
    a, sp = split_shape(p.body)
    env = {q.name: q.type for q in p.params}
    ent = Entailment(dom, env, budget=budget)
    if not ent.check(a, [_ex(outs, sp)]).holds:
        return False
    taken = set(p.formals) | set(dom.consts)
    ren = {}
    for q in outs:
        ren[q.name] = fresh_name(q.name, taken)
        taken.add(ren[q.name])
        env[ren[q.name]] = q.type
    ent = Entailment(dom, env, budget=budget)
    other = subst_many(sp, {k: Var(v) for k, v in ren.items()})
    same = conj(Rel("=", Var(k), Var(v)) for k, v in ren.items())
    return ent.check(conj([a, sp, other]), [same]).holds


def output_function(p: ProcedureDef) -> Optional[Term]:
    """f with P of the form O = f(V, I), for a single opaque output."""
    outs = p.by_mode("out")
    if len(outs) != 1:
        return None
    sp = split_shape(p.body)[1]
    return defining_eq(sp, outs[0].name)


# ----- calculation -----

@dataclass
class CalcOutput:
    name: str
    kind: str
    calculated: ProcedureDef
    simplified: ProcedureDef
    emitted: ProcedureDef
    specialization: str
    deterministic: Optional[bool]
    ci_check: SideCondition
    free_constraint: SideCondition
    specialized: Optional[ProcedureDef] = None
    demonic: Optional[ProcedureDef] = None
    steps: list[SimpStep] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        from .syntax import pp_command
        out = {"procedure": self.name, "kind": self.kind,
               "calculated": pp_command(self.calculated.body),
               "simplified": pp_command(self.simplified.body),
               "emitted": pp_command(self.emitted.body),
               "specialization": self.specialization,
               "deterministic": self.deterministic,
               "ci_check": self.ci_check.to_json(),
               "free_constraint": self.free_constraint.to_json(),
               "simplification": [s.to_json() for s in self.steps],
               "notes": self.notes}
        if self.specialized is not None:
            out["specialized"] = pp_command(self.specialized.body)
        if self.demonic is not None:
            out["demonic"] = pp_command(self.demonic.body)
        return out


@dataclass
class LemmaCheck:
    lemma: Lemma
    holds: bool
    counterexample: Optional[dict] = None

    def to_json(self) -> dict:
        return {"lemma": pp_pred(self.lemma.pred), "holds": self.holds,
                "counterexample": None if self.counterexample is None else
                {k: format_value(v) for k, v in self.counterexample.items()}}


def check_lemmas(ci: Coupling, dom: DomainConfig, *, budget: Optional[int] = None) -> list[LemmaCheck]:
    out = []
    for lem in ci.lemmas:
        env = dict(lem.params)
        try:
            res = Entailment(dom, env, budget=budget).check(PTrue(), [lem.pred])
            out.append(LemmaCheck(lem, res.holds, res.counterexample))
        except (BudgetExceeded, EvalError) as e:
            out.append(LemmaCheck(lem, False, None))
    return out


class Calculator:
    def __init__(self, abs_mod: ModuleDecl, ci: Coupling, dom: DomainConfig, *,
                 simplify: bool = True, budget: Optional[int] = None):
        if ci.abs_type != abs_mod.opaque:
            raise ModuleError(f"coupling invariant is about {ci.abs_type}, module {abs_mod.name} "
                              f"hides {abs_mod.opaque}")
        self.abs_mod = abs_mod
        self.ci = ci
        self.dom = bind_module_types(dom, abs_mod)
        if ci.conc_type not in self.dom.aliases:
            raise ModuleError(f"the domain does not define the concrete type {ci.conc_type}")
        self.simplify_on = simplify
        self.budget = budget
        self.lemmas = check_lemmas(ci, self.dom, budget=budget)
        self.rules = [r for lc in self.lemmas if lc.holds for r in rules_from_lemma(lc.lemma)]
        self.ci_class = classify_ci(ci, self.dom)

    def verifier(self, sh: ProcShape) -> Verifier:
        return Verifier(self.dom, sh.env_conc(), self.budget)

    def simplify_assumption(self, sh: ProcShape, a_calc: Pred, v: Verifier) -> tuple[Pred, list[SimpStep]]:
        if not sh.ins or not self.simplify_on:
            return a_calc, []
        # swap the abstract type guards for concrete ones and drop the coupling
        swap = {q.name: n for q, n in zip(sh.ins, sh.ins_c)}
        cs = []
        for c in split_conj(sh.assumption):
            if isinstance(c, Is) and isinstance(c.term, Var) and c.term.name in swap:
                cs.append(Is(Var(swap[c.term.name]), sh.conc_type))
            else:
                cs.append(c)
        cand = conj(cs)
        if not (free_vars(cand) & set(swap)):
            ok, _, _ = v.equivalent(PTrue(), a_calc, cand)
            if ok:
                return cand, [SimpStep("assumption type swap", True, pp_pred(cand))]
        res = Simplifier(v, self.rules).simplify(a_calc, PTrue())
        return res.pred, res.steps

    def calculate(self, p: ProcedureDef, *, specialize: bool = False, demonic: bool = False) -> CalcOutput:
        sh = proc_shape(p, self.ci)
        params = sh.conc_params()
        a_calc, p_calc = general_form(sh, self.ci)
        calculated = make_proc(p.name, params, a_calc, p_calc)
        ci_check = check_ci_output(p, self.ci, self.dom, budget=self.budget)
        free = check_free_constraint(p, self.ci, self.dom, budget=self.budget)
        det = is_deterministic(p, self.dom, budget=self.budget)
        v = self.verifier(sh)
        notes = []
        a_simp, steps = self.simplify_assumption(sh, a_calc, v)
        p_simp = p_calc
        if self.simplify_on:
            res = Simplifier(v, self.rules).simplify(p_calc, a_calc)
            p_simp = res.pred
            steps += res.steps
        simplified = make_proc(p.name, params, a_simp, p_simp)
        emitted = simplified
        cell, spec_pred = self.specialize(sh, det)
        specialized = None
        if cell != "general form" and spec_pred is not None:
            if self.simplify_on:
                spec_pred = Simplifier(v, self.rules).simplify(spec_pred, a_calc).pred
            ok, cex, err = v.equivalent(a_calc, p_calc, spec_pred)
            if ok:
                specialized = make_proc(p.name, params, a_simp, spec_pred)
                if specialize:
                    emitted = specialized
            else:
                notes.append(f"specialization {cell} disagrees with the general form"
                             + (f" at {format_binding(cex)}" if cex else f" ({err})" if err else ""))
                cell = "general form"
        if not ci_check.ok:
            notes.append("side condition on outputs does not hold; the result is not guaranteed")
        if not free.ok:
            notes.append("the answer depends on the abstract input; the abstract type cannot be "
                         "eliminated")
        dem = None
        if demonic or specialize:
            try:
                dem = self.demonic_form(sh, det, a_simp)
            except ModuleError as e:
                if demonic:
                    notes.append(str(e))
            if dem is not None and demonic:
                emitted = dem
        return CalcOutput(p.name, sh.kind, calculated, simplified, emitted, cell, det, ci_check,
                          free, specialized, dem, steps, notes)

    def specialize(self, sh: ProcShape, det: Optional[bool]) -> tuple[str, Optional[Pred]]:
        """The cell of the specialisation table that applies, and its specification."""
        cls = self.ci_class
        f = output_function(sh.proc) if det else None
        ins = [q.name for q in sh.ins]
        outs = [q.name for q in sh.outs]
        if len(outs) > 1:
            return "general form", None
        if cls.concretisation and cls.cf is not None and det and f is not None:
            cf = lambda t: subst_many(cls.cf, {self.ci.abs_var: t})
            body = Rel("=", Var(sh.outs_c[0]), cf(f))
            if not sh.ins:
                return "concretisation function, deterministic", body
            ant = mk_and(conj(Rel("=", Var(c), cf(Var(a))) for a, c in zip(ins, sh.ins_c)), sh.assumption)
            return "concretisation function, deterministic", _all(sh.ins, Implies(ant, body))
        if cls.abstraction and cls.af is not None:
            af = lambda n: subst_many(cls.af, {self.ci.conc_var: Var(n)})
            to_af = {a: af(c) for a, c in zip(ins, sh.ins_c)}
            if det and f is not None:
                return ("abstraction function, deterministic",
                        Rel("=", af(sh.outs_c[0]), subst_many(f, to_af)))
            to_af.update({o: af(c) for o, c in zip(outs, sh.outs_c)})
            return "abstraction function, nondeterministic", subst_many(sh.spec, to_af)
        if det and f is not None:
            body = apply_ci(self.ci, f, Var(sh.outs_c[0]))
            if not sh.ins:
                return "relational, deterministic", body
            ant = mk_and(ci_pointwise(self.ci, ins, sh.ins_c), sh.assumption)
            return "relational, deterministic", _all(sh.ins, Implies(ant, body))
        return "general form", None

    def demonic_form(self, sh: ProcShape, det: Optional[bool], a_simp: Pred) -> ProcedureDef:
        cls = self.ci_class
        f = output_function(sh.proc)
        if not det or f is None or not cls.abstraction or cls.af is None or len(sh.outs) != 1:
            raise ModuleError(f"{sh.proc.name}: a demonic form needs a deterministic procedure "
                              f"and an abstraction function")
        taken = set(sh.proc.formals) | set(sh.ins_c) | set(sh.outs_c) | set(self.dom.consts)
        x = "X" if "X" not in taken else fresh_name("X", taken)
        af = lambda n: subst_many(cls.af, {self.ci.conc_var: Var(n)})
        guard = Rel("=", af(x), subst_many(f, {q.name: af(c) for q, c in zip(sh.ins, sh.ins_c)}))
        body = Spec(Rel("=", Var(sh.outs_c[0]), Var(x)))
        if not isinstance(a_simp, PTrue):
            body = Seq(Assume(a_simp), body)
        return ProcedureDef(sh.proc.name, sh.conc_params(), GenDemon(x, sh.conc_type, guard, body))


@dataclass
class ModuleCalculation:
    module: ModuleDecl
    outputs: list[CalcOutput]
    ci_class: CiClass
    lemmas: list[LemmaCheck]
    wall_ms: float = 0.0

    @property
    def side_conditions_hold(self) -> bool:
        return all(o.ci_check.ok and o.free_constraint.ok for o in self.outputs)


def calculate_module(abs_mod: ModuleDecl, ci: Coupling, dom: DomainConfig, *,
                     specialize: bool = False, demonic: bool = False, simplify: bool = True,
                     budget: Optional[int] = None) -> ModuleCalculation:
    start = time.perf_counter()
    calc = Calculator(abs_mod, ci, dom, simplify=simplify, budget=budget)
    outs = [calc.calculate(p, specialize=specialize, demonic=demonic) for p in abs_mod.procs]
    mod = ModuleDecl(ci.conc_module, ci.conc_type, calc.dom.aliases.get(ci.conc_type),
                     tuple(o.emitted for o in outs))
    return ModuleCalculation(mod, outs, calc.ci_class, calc.lemmas,
                             round((time.perf_counter() - start) * 1000, 3))


def calculate(p: ProcedureDef, ci: Coupling, dom: DomainConfig, abs_mod: ModuleDecl, **kw) -> CalcOutput:
    opts = {k: kw.pop(k) for k in ("specialize", "demonic") if k in kw}
    return Calculator(abs_mod, ci, dom, **kw).calculate(p, **opts)


def calculate_demonic(p: ProcedureDef, ci: Coupling, dom: DomainConfig, abs_mod: ModuleDecl, *,
                      budget: Optional[int] = None) -> ProcedureDef:
    calc = Calculator(abs_mod, ci, dom, budget=budget)
    sh = proc_shape(p, ci)
    det = is_deterministic(p, calc.dom, budget=budget)
    a_calc, _ = general_form(sh, ci)
    a_simp, _ = calc.simplify_assumption(sh, a_calc, calc.verifier(sh))
    return calc.demonic_form(sh, det, a_simp)

"""Refinement laws as checked rewrites, context collection and derivation checking.

A law rewrites the subcommand at a path and returns the proof obligations
that justify the step. Obligations are entailments ``context |= goal`` where
the context is gathered on the way down to the path: an assumption or a
specification to the left of a sequential conjunction is known to hold on
its right, and entering a quantifier forgets whatever mentions its variable.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .domain import (
    BudgetExceeded, DomainConfig, EvalError, FuelExhausted, format_binding, format_value,
    split_conj,
)
from .semantics import DemonicError, Semantics, conj, mk_and, mk_implies
from .syntax import (
    And, ApplyLaw, Assume, BINARY_COMMANDS, CExists, CForall, Call, Command, Demon, Derivation,
    Disj, GenDemon, Iff, Is, Or, Par, ParseError, Pred, ProcedureDef, PTrue, Rel, Seq,
    SemanticStep, Spec, TypeExpr, Var, alpha_equal, free_vars, parse_tokens, pp, pp_command,
    pp_pred, subst_many,
)
from .syntax.ast import BINARY_PREDS
from .syntax.paths import PathError, children, focus, replace


class LawError(ValueError):
    """A law does not apply: wrong shape, missing argument or failed side condition."""


# ----- context -----

@dataclass
class Context:
    pred: Pred
    env: dict[str, Optional[TypeExpr]] = field(default_factory=dict)   # binders crossed


def _drop_mentioning(p: Pred, v: str) -> Pred:
    return conj(c for c in split_conj(p) if v not in free_vars(c))


def collect_context(c: Command, path: Sequence[int], global_ctx: Optional[Pred] = None) -> Context:
    ctx = Context(global_ctx or PTrue())
    node = c
    for i in path:
        kids = children(node)
        if not 0 <= i < len(kids):
            raise PathError(f"path index {i} out of range at {pp_command(node)}")
        if isinstance(node, Seq) and i == 1:
            if isinstance(node.lhs, (Assume, Spec)):
                ctx.pred = mk_and(ctx.pred, node.lhs.pred)
        elif isinstance(node, (CExists, CForall, GenDemon)):
            ctx.pred = _drop_mentioning(ctx.pred, node.var)
            ctx.env[node.var] = node.type
        node = kids[i]
    return ctx


# ----- obligations and applications -----

@dataclass
class Obligation:
    law: str
    path: tuple[int, ...]
    context: Pred
    goal: Pred
    env: dict = field(default_factory=dict)
    verdict: Optional[str] = None
    counterexample: Optional[dict] = None
    checked: int = 0

    def text(self) -> str:
        g = pp_pred(self.goal)
        if isinstance(self.goal, BINARY_PREDS):
            g = f"({g})"
        if isinstance(self.context, PTrue):
            return f"|= {g}"
        return f"{pp_pred(self.context)} |= {g}"

    def to_json(self) -> dict:
        return {"law": self.law, "path": list(self.path), "goal": self.text(),
                "verdict": self.verdict,
                "counterexample": None if self.counterexample is None else
                {k: format_value(v) for k, v in self.counterexample.items()}}


@dataclass
class LawApplication:
    law: str
    path: tuple[int, ...]
    args: dict
    before: Command
    after: Command
    obligations: list[Obligation]


@dataclass(frozen=True)
class ArgSpec:
    name: str
    kind: str          # "pred" | "term" | "cmd" | "var" | "type"


@dataclass(frozen=True)
class Law:
    name: str
    kind: str                     # "rewrite" | "context"
    shape: str
    args: tuple[ArgSpec, ...]
    obligations: tuple[str, ...]
    rewrite: Optional[Callable] = field(default=None, compare=False, repr=False)

    def describe(self) -> str:
        args = ", ".join(f"{a.name}: {a.kind}" for a in self.args)
        obl = "; ".join(self.obligations) or "none"
        return f"{self.name} [{self.kind}]  {self.shape}  args({args})  obligations: {obl}"


@dataclass
class _Env:
    """What a rewrite can see: context, semantics and the location."""
    ctx: Context
    sem: Optional[Semantics]
    path: tuple[int, ...]
    law: str

    def oblige(self, goal: Pred, extra: Optional[Pred] = None, env: Optional[dict] = None) -> Obligation:
        hyp = self.ctx.pred if extra is None else mk_and(self.ctx.pred, extra)
        return Obligation(self.law, self.path, hyp, goal, {**self.ctx.env, **(env or {})})


def _shape(cond: bool, law: str, want: str, got: Command) -> None:
    if not cond:
        raise LawError(f"{law} expects {want}, found {pp_command(got)}")


def _need(args: dict, name: str, law: str):
    if name not in args:
        raise LawError(f"{law} needs the argument {name}")
    return args[name]


# ----- individual laws -----

def _lift_disj(c, args, env):
    _shape(isinstance(c, Spec) and isinstance(c.pred, Or), env.law, "[P \\/ Q]", c)
    return Disj(Spec(c.pred.lhs), Spec(c.pred.rhs)), []


def _lift_conj(c, args, env):
    _shape(isinstance(c, Spec) and isinstance(c.pred, And), env.law, "[P /\\ Q]", c)
    return Par(Spec(c.pred.lhs), Spec(c.pred.rhs)), []


def _dist_seq_disj(c, args, env):
    _shape(isinstance(c, Seq) and isinstance(c.rhs, Disj), env.law, "S, (T \\/ U)", c)
    return Disj(Seq(c.lhs, c.rhs.lhs), Seq(c.lhs, c.rhs.rhs)), []


def _equiv_specs(c, args, env):
    _shape(isinstance(c, Spec), env.law, "[P]", c)
    q = _need(args, "Q", env.law)
    ob = Obligation(env.law, env.path, PTrue(), Iff(c.pred, q), dict(env.ctx.env))
    return Spec(q), [ob]


def _equiv_specs_wrt(c, args, env):
    _shape(isinstance(c, Spec), env.law, "[P]", c)
    q = _need(args, "Q", env.law)
    return Spec(q), [env.oblige(Iff(c.pred, q))]


def _ctx_ass_spec(c, args, env):
    _shape(isinstance(c, Seq) and isinstance(c.lhs, Assume) and isinstance(c.rhs, Spec),
           env.law, "{A}, [P]", c)
    q = _need(args, "Q", env.law)
    return Seq(c.lhs, Spec(q)), [env.oblige(Iff(c.rhs.pred, q), extra=c.lhs.pred)]


def _remove_ass(c, args, env):
    _shape(isinstance(c, Seq) and isinstance(c.lhs, Assume), env.law, "{A}, S", c)
    return c.rhs, []


def _weaken_ass(c, args, env):
    _shape(isinstance(c, Assume), env.law, "{A}", c)
    b = _need(args, "B", env.law)
    return Assume(b), [env.oblige(b, extra=c.pred)]


def _parameterise(c, args, env):
    _shape(isinstance(c, Call), env.law, "a procedure call", c)
    if env.sem is None:
        raise LawError("parameterise needs the procedure definitions")
    proc = env.sem.proc(c.name)
    if len(proc.formals) != len(c.args):
        raise LawError(f"{c.name} expects {len(proc.formals)} arguments")
    if proc.recursive:
        raise LawError(f"{c.name} is recursive; only non-recursive calls may be unfolded")
    return subst_many(proc.body, dict(zip(proc.formals, c.args))), []


def _fold(c, args, env):
    call = _need(args, "call", env.law)
    if not isinstance(call, Call):
        raise LawError("fold needs call := p(args)")
    if env.sem is None:
        raise LawError("fold needs the procedure definitions")
    proc = env.sem.proc(call.name)
    body = subst_many(proc.body, dict(zip(proc.formals, call.args)))
    if proc.recursive or not alpha_equal(body, c):
        raise LawError(f"{pp_command(c)} is not the body of {pp_command(call)}")
    return call, []


def _one_point(c, args, env):
    _shape(isinstance(c, CExists), env.law, "ex X:T.([X = E], S) or ex X:T.([X = E /\\ P])", c)
    x, ty, body = c.var, c.type, c.body
    if ty is None and env.sem is not None:
        ty = env.sem.env.get(x)
    if ty is None:
        raise LawError(f"one_point needs a type for {x}")
    if isinstance(body, Seq) and isinstance(body.lhs, Spec):
        eq, rest = body.lhs.pred, body.rhs
    elif isinstance(body, Spec) and isinstance(body.pred, And):
        eq, rest = body.pred.lhs, Spec(body.pred.rhs)
    else:
        eq, rest = None, None
    e = None
    if isinstance(eq, Rel) and eq.op == "=":
        if isinstance(eq.lhs, Var) and eq.lhs.name == x:
            e = eq.rhs
        elif isinstance(eq.rhs, Var) and eq.rhs.name == x:
            e = eq.lhs
    _shape(e is not None, env.law, f"an equation {x} = E first under the quantifier", c)
    if x in free_vars(e):
        raise LawError(f"side condition violated: {x} occurs free in {pp(e)}")
    return subst_many(rest, {x: e}), [env.oblige(Is(e, ty))]


def _gendemon_intro(c, args, env):
    if env.sem is None:
        raise LawError("gendemon_intro needs a semantics")
    x = _need(args, "X", env.law)
    ty = _need(args, "T", env.law)
    g = _need(args, "G", env.law)
    s = _need(args, "S", env.law)
    if not isinstance(x, Var):
        raise LawError("X must be a variable")
    if x.name in free_vars(c):
        raise LawError(f"side condition violated: {x.name} occurs free in the refined command")
    sem = env.sem
    goal = mk_implies(sem.ok(c), mk_and(sem.ok(s), Iff(sem.ef(c), sem.ef(s))))
    ob = env.oblige(goal, extra=g, env={x.name: ty})
    return GenDemon(x.name, ty, g, s), [ob]


def _gendemon_eliminate(c, args, env):
    _shape(isinstance(c, GenDemon), env.law, "dch X:T.(G =>> S)", c)
    u = _need(args, "U", env.law)
    ty = c.type
    if ty is None and env.sem is not None:
        ty = env.sem.env.get(c.var)
    if ty is None:
        raise LawError(f"gendemon_eliminate needs a type for {c.var}")
    obs = [env.oblige(subst_many(c.guard, {c.var: u})), env.oblige(Is(u, ty))]
    return subst_many(c.body, {c.var: u}), obs


def _demon_left(c, args, env):
    _shape(isinstance(c, Demon), env.law, "S |~| T", c)
    return c.lhs, []


def _demon_right(c, args, env):
    _shape(isinstance(c, Demon), env.law, "S |~| T", c)
    return c.rhs, []


_SCOPE_OPS = (Seq, Par, Disj)


def _extend_scope(c, args, env):
    """Move an existential outwards over ``,``, ``/\\`` or ``\\/``."""
    _shape(isinstance(c, _SCOPE_OPS), env.law, "S op (ex X.(T)) or (ex X.(T)) op S", c)
    for side in (1, 0):
        q = (c.lhs, c.rhs)[side]
        other = (c.lhs, c.rhs)[1 - side]
        if isinstance(q, CExists):
            if q.var in free_vars(other):
                raise LawError(f"side condition violated: {q.var} occurs free in {pp_command(other)}")
            inner = type(c)(other, q.body) if side == 1 else type(c)(q.body, other)
            return CExists(q.var, q.type, inner), []
    raise LawError(f"{env.law} expects an existential operand, found {pp_command(c)}")


def _shrink_scope(c, args, env):
    _shape(isinstance(c, CExists) and isinstance(c.body, _SCOPE_OPS), env.law,
           "ex X.(S op T) with X free on one side only", c)
    b = c.body
    if c.var not in free_vars(b.lhs):
        return type(b)(b.lhs, CExists(c.var, c.type, b.rhs)), []
    if c.var not in free_vars(b.rhs):
        return type(b)(CExists(c.var, c.type, b.lhs), b.rhs), []
    raise LawError(f"side condition violated: {c.var} occurs on both sides")


def _para_into_seq(c, args, env):
    _shape(isinstance(c, Par) and isinstance(c.rhs, Seq), env.law, "S /\\ (T, U)", c)
    return Seq(c.rhs.lhs, Par(c.lhs, c.rhs.rhs)), []


def _law(name, kind, shape, args=(), obligations=(), fn=None) -> Law:
    return Law(name, kind, shape, tuple(ArgSpec(*a) for a in args), tuple(obligations), fn)


LAWS: dict[str, Law] = {law.name: law for law in [
    _law("lift_disj", "rewrite", "[P \\/ Q] = [P] \\/ [Q]", fn=_lift_disj),
    _law("lift_conj", "rewrite", "[P /\\ Q] = [P] /\\ [Q]", fn=_lift_conj),
    _law("dist_seq_disj", "rewrite", "S, (T \\/ U) = (S, T) \\/ (S, U)", fn=_dist_seq_disj),
    _law("equiv_specs", "rewrite", "[P] = [Q]", [("Q", "pred")], ["|= P <=> Q"], _equiv_specs),
    _law("equiv_specs_wrt", "rewrite", "ctx |> [P] = [Q]", [("Q", "pred")],
         ["ctx |= P <=> Q"], _equiv_specs_wrt),
    _law("ctx_ass_spec", "rewrite", "{A}, [P] <= {A}, [Q]", [("Q", "pred")],
         ["ctx /\\ A |= P <=> Q"], _ctx_ass_spec),
    _law("remove_ass", "rewrite", "{A}, S <= S", fn=_remove_ass),
    _law("weaken_ass", "rewrite", "{A} <= {B}", [("B", "pred")], ["ctx /\\ A |= B"], _weaken_ass),
    _law("parameterise", "rewrite", "p(U) = S[V\\U] where p(V) = S", fn=_parameterise),
    _law("fold", "rewrite", "S[V\\U] = p(U) where p(V) = S", [("call", "cmd")], fn=_fold),
    _law("one_point", "rewrite", "ex X:T.([X = E], S) = S[X\\E]  (X not free in E)", (),
         ["ctx |= E in T"], _one_point),
    _law("gendemon_intro", "rewrite", "D <= dch X:T.(G =>> S)",
         [("X", "var"), ("T", "type"), ("G", "pred"), ("S", "cmd")],
         ["ctx /\\ G |= ok.D => ok.S /\\ (ef.D <=> ef.S)"], _gendemon_intro),
    _law("gendemon_eliminate", "rewrite", "dch X:T.(G =>> S) <= S[X\\U]", [("U", "term")],
         ["ctx |= G[X\\U]", "ctx |= U in T"], _gendemon_eliminate),
    _law("demon_elim_left", "rewrite", "S |~| T <= S", fn=_demon_left),
    _law("demon_elim_right", "rewrite", "S |~| T <= T", fn=_demon_right),
    _law("extend_scope", "rewrite", "S op (ex X.T) = ex X.(S op T)  (X not free in S)",
         fn=_extend_scope),
    _law("shrink_scope", "rewrite", "ex X.(S op T) = S op (ex X.T)  (X not free in S)",
         fn=_shrink_scope),
    _law("para_into_seq", "rewrite", "S /\\ (T, U) <= T, (S /\\ U)", fn=_para_into_seq),
    _law("context_seq_ass", "context", "ctx /\\ B |> T <= T'  gives  ctx |> {B}, T <= {B}, T'"),
    _law("context_seq_spec", "context", "ctx /\\ P |> T <= T'  gives  ctx |> [P], T <= [P], T'"),
    _law("mono_para_ctx", "context", "the context of S /\\ T is inherited by S and T"),
    _law("mono", "context", "refining a component refines the whole command"),
]}


def parse_law_args(law: Law, raw: Sequence[tuple[str, object]]) -> dict:
    from .syntax import Parser
    rules = {"pred": Parser.pred, "term": Parser.term, "cmd": Parser.command,
             "type": Parser.type_expr, "var": Parser.term}
    known = {a.name: a for a in law.args}
    out = {}
    for name, tokens in raw:
        if name not in known:
            raise LawError(f"{law.name} has no argument {name}")
        if isinstance(tokens, (Pred, Command, TypeExpr)) or not isinstance(tokens, tuple):
            out[name] = tokens
            continue
        out[name] = parse_tokens(tokens, rules[known[name].kind])
    return out


def apply_law(c: Command, law: str, path: Sequence[int], args: Optional[dict] = None, *,
              context: Optional[Pred] = None, sem: Optional[Semantics] = None) -> LawApplication:
    if law not in LAWS:
        raise LawError(f"unknown law {law}")
    spec = LAWS[law]
    if spec.kind != "rewrite":
        raise LawError(f"{law} is a context rule; it is applied implicitly when descending a path")
    path = tuple(path)
    target = focus(c, path)
    ctx = collect_context(c, path, context)
    new, obligations = spec.rewrite(target, dict(args or {}), _Env(ctx, sem, path, law))
    return LawApplication(law, path, dict(args or {}), c, replace(c, path, new), obligations)


def discharge(ob: Obligation, sem: Semantics) -> Obligation:
    """Decide an obligation by enumeration over the semantics' domain."""
    extra = {k: t for k, t in ob.env.items() if t is not None}
    if extra:
        sem.declare(extra)
    res = sem.entailment().check(ob.context, [ob.goal])
    ob.verdict = "discharged" if res.holds else "failed"
    ob.counterexample = res.counterexample
    ob.checked = res.checked
    return ob


# ----- derivation scripts -----

@dataclass
class StepReport:
    index: int
    kind: str                      # "law" | "semantic"
    law: Optional[str]
    path: Optional[tuple[int, ...]]
    passed: bool
    message: str
    before: Command
    after: Command
    obligations: list[Obligation] = field(default_factory=list)
    refinement: Optional[object] = None

    def to_json(self) -> dict:
        out = {"step": self.index, "kind": self.kind, "passed": self.passed,
               "message": self.message, "result": pp_command(self.after)}
        if self.law:
            out["law"] = self.law
            out["path"] = list(self.path or ())
        if self.refinement is not None:
            out["refinement"] = self.refinement.to_json()
        return out


@dataclass
class DerivationReport:
    passed: bool
    start: Command
    result: Command
    steps: list[StepReport]
    checked: int = 0
    wall_ms: float = 0.0

    @property
    def obligations(self) -> list[Obligation]:
        return [ob for s in self.steps for ob in s.obligations]


def semantics_for(script: Derivation, dom: DomainConfig, *, fuel: Optional[int] = None,
                  budget: Optional[int] = None, jobs: int = 1) -> Semantics:
    return Semantics(dom, script.procs, dict(script.vars), fuel=fuel, budget=budget, jobs=jobs)


def check_derivation(script: Derivation, dom: DomainConfig, *, fuel: Optional[int] = None,
                     budget: Optional[int] = None, jobs: int = 1,
                     sem: Optional[Semantics] = None) -> DerivationReport:
    start = time.perf_counter()
    sem = sem or semantics_for(script, dom, fuel=fuel, budget=budget, jobs=jobs)
    current = script.start
    steps: list[StepReport] = []
    total = 0
    for i, step in enumerate(script.steps, 1):
        if isinstance(step, SemanticStep):
            s, t = current, step.expect
            if script.context is not None:
                s, t = Seq(Assume(script.context), s), Seq(Assume(script.context), t)
            rep = sem.refines(s, t)
            total += rep.checked
            ok = rep.holds
            steps.append(StepReport(i, "semantic", None, None, ok,
                                    "refinement holds" if ok else rep.describe(),
                                    current, step.expect, refinement=rep))
            if not ok:
                return DerivationReport(False, script.start, current, steps, total, _ms(start))
            current = step.expect
            continue
        assert isinstance(step, ApplyLaw)
        try:
            law = LAWS.get(step.law)
            if law is None:
                raise LawError(f"unknown law {step.law}")
            args = parse_law_args(law, step.args)
            app = apply_law(current, step.law, step.path, args, context=script.context, sem=sem)
        except (LawError, PathError, ParseError, EvalError) as e:
            steps.append(StepReport(i, "law", step.law, step.path, False, str(e), current, current))
            return DerivationReport(False, script.start, current, steps, total, _ms(start))
        if not alpha_equal(app.after, step.expect):
            msg = (f"rewrite produced {pp_command(app.after)}, "
                   f"expected {pp_command(step.expect)}")
            steps.append(StepReport(i, "law", step.law, step.path, False, msg, current, app.after,
                                    app.obligations))
            return DerivationReport(False, script.start, current, steps, total, _ms(start))
        failed = None
        for ob in app.obligations:
            discharge(ob, sem)
            total += ob.checked
            if ob.verdict != "discharged":
                failed = ob
                break
        if failed is not None:
            msg = f"obligation fails: {failed.text()}"
            if failed.counterexample is not None:
                msg += f"; counterexample {format_binding(failed.counterexample)}"
            steps.append(StepReport(i, "law", step.law, step.path, False, msg, current,
                                    step.expect, app.obligations))
            return DerivationReport(False, script.start, current, steps, total, _ms(start))
        steps.append(StepReport(i, "law", step.law, step.path, True,
                                f"{len(app.obligations)} obligation(s) discharged",
                                current, step.expect, app.obligations))
        current = step.expect
    return DerivationReport(True, script.start, current, steps, total, _ms(start))


def _ms(start: float) -> float:
    return round((time.perf_counter() - start) * 1000, 3)

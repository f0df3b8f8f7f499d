"""ok/ef semantics of commands and refinement decided by enumeration.

``ok`` is the condition under which a command does not abort and ``ef`` the
predicate describing its answers. Both are built symbolically, so they can be
printed inside obligations, and then compiled by the evaluator. Procedure
calls stay symbolic (a ``CallSem`` node) and are unfolded lazily at
evaluation time, each unfolding consuming one unit of fuel.

Demonic constructs (``|~|``, ``dch``, ``magic``) have no ok/ef of their own.
A demonic command stands for the set of its resolutions: a binary choice
picks a branch, ``magic`` has none, and a generalised choice picks, for every
valuation of the guard's other free variables, one value satisfying the guard.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Union

from .domain import (
    BudgetExceeded, DomainConfig, EvalError, Entailment, Evaluator, FuelExhausted, OutOfDomain,
    format_binding, format_value, value_to_term,
)
from .syntax import (
    And, Assume, BINARY_COMMANDS, CExists, CForall, Call, Command, Demon, Disj, GenDemon, Iff,
    Implies, Magic, Not, Or, Par, PExists, PFalse, PForall, Pred, ProcedureDef, PTrue, Seq, Spec,
    TypeExpr, Var, free_vars, fresh_name, is_demonic, ordered_free_vars, pp_command, subst_many,
)
from .syntax.ast import Node
from .syntax.paths import children, replace


class DemonicError(ValueError):
    """A demonic construct where only implementable commands are allowed."""


# ----- smart constructors -----

def mk_and(a: Pred, b: Pred) -> Pred:
    if isinstance(a, PTrue):
        return b
    if isinstance(b, PTrue):
        return a
    if isinstance(a, PFalse) or isinstance(b, PFalse):
        return PFalse()
    return And(a, b)


def mk_or(a: Pred, b: Pred) -> Pred:
    if isinstance(a, PFalse):
        return b
    if isinstance(b, PFalse):
        return a
    if isinstance(a, PTrue) or isinstance(b, PTrue):
        return PTrue()
    return Or(a, b)


def mk_implies(a: Pred, b: Pred) -> Pred:
    if isinstance(a, PTrue):
        return b
    if isinstance(a, PFalse) or isinstance(b, PTrue):
        return PTrue()
    return Implies(a, b)


def mk_not(a: Pred) -> Pred:
    if isinstance(a, PTrue):
        return PFalse()
    if isinstance(a, PFalse):
        return PTrue()
    if isinstance(a, Not):
        return a.body
    return Not(a)


def conj(preds: Iterable[Pred]) -> Pred:
    out: Pred = PTrue()
    items = [p for p in preds if not isinstance(p, PTrue)]
    for p in reversed(items):
        out = p if isinstance(out, PTrue) else And(p, out)
    return out


def _quant(cls, v: str, ty, body: Pred) -> Pred:
    if isinstance(body, (PTrue, PFalse)):
        return body
    return cls(v, ty, body)


# ----- symbolic call node -----

@dataclass(frozen=True, eq=False)
class CallSem(Pred):
    """ok or ef of a procedure call, unfolded only when evaluated."""
    kind: str
    call: Call
    fuel: int
    sem: "Semantics" = field(repr=False)

    def free_vars(self) -> set[str]:
        return free_vars(self.call)

    def children(self):
        return list(self.call.args)

    def substitute(self, fn):
        call = Call(self.call.name, tuple(fn(a) for a in self.call.args), span=self.call.span)
        return CallSem(self.kind, call, self.fuel, self.sem)

    def pretty(self) -> str:
        return f"{self.kind}.{pp_command(self.call)}"

    def compile_pred(self, ev: Evaluator):
        return self.sem._compile_call(self, ev)


# ----- reports -----

@dataclass
class RefinesReport:
    verdict: str                            # "refines" | "fails"
    clause: Optional[str] = None            # "ok" | "ef" on failure
    counterexample: Optional[dict] = None
    checked: int = 0
    wall_ms: float = 0.0
    witness: Optional[object] = None        # chosen resolution for demonic checks
    note: Optional[str] = None
    choices: list = field(default_factory=list, repr=False)

    @property
    def holds(self) -> bool:
        return self.verdict == "refines"

    def describe(self) -> str:
        if self.holds:
            return "refines"
        parts = ["fails"]
        if self.note:
            parts.append(self.note)
        if self.clause:
            parts.append(f"{self.clause} clause")
        if self.counterexample is not None:
            parts.append("at " + format_binding(self.counterexample))
        return ": ".join(parts[:1]) + (" (" + "; ".join(parts[1:]) + ")" if len(parts) > 1 else "")

    def to_json(self) -> dict:
        out = {"verdict": self.verdict, "clause": self.clause,
               "counterexample": _json_binding(self.counterexample),
               "bindings_checked": self.checked}
        if self.note:
            out["note"] = self.note
        if self.witness is not None:
            out["witness"] = self.witness
        return out


def _json_binding(b: Optional[dict]):
    if b is None:
        return None
    return {k: format_value(v) for k, v in b.items()}


@dataclass
class Choice:
    """One row of a generalised demonic choice: guard context values and the pick."""
    context: dict
    value: object


ProcTable = Mapping[str, ProcedureDef]


class Semantics:
    """ok/ef and refinement over a finite domain and a procedure environment."""

    def __init__(self, dom: DomainConfig, procs: Union[ProcTable, Iterable[ProcedureDef]] = (),
                 env: Optional[dict[str, TypeExpr]] = None, *, fuel: Optional[int] = None,
                 budget: Optional[int] = None, jobs: int = 1):
        self.dom = dom
        if isinstance(procs, Mapping):
            self.procs = dict(procs)
        else:
            self.procs = {p.name: p for p in procs}
        self.env = {**dom.vars, **(env or {})}
        for p in self.procs.values():
            for q in p.params:
                self.env.setdefault(q.name, q.type)
        self.ev = Evaluator(dom, self.env)
        self.fuel = fuel if fuel is not None else self.ev.list_limit + 2
        self.budget = budget if budget is not None else dom.budget
        self.jobs = jobs
        self._sem_cache: dict = {}
        self._bodies: dict = {}

    def entailment(self) -> Entailment:
        return Entailment(self.dom, self.env, budget=self.budget, jobs=self.jobs, evaluator=self.ev)

    def declare(self, env: Mapping[str, TypeExpr]) -> None:
        """Add variable typings; a fresh evaluator keeps cached closures consistent."""
        changed = {k: v for k, v in env.items() if self.env.get(k) != v}
        if changed:
            self.env.update(changed)
            self.ev = Evaluator(self.dom, self.env)
            self._bodies.clear()

    # ----- ok / ef -----

    def ok(self, c: Command, fuel: Optional[int] = None) -> Pred:
        return self._sem(c, "ok", self.fuel if fuel is None else fuel)

    def ef(self, c: Command, fuel: Optional[int] = None) -> Pred:
        return self._sem(c, "ef", self.fuel if fuel is None else fuel)

    def _sem(self, c: Command, kind: str, fuel: int) -> Pred:
        key = (id(c), kind, fuel)
        hit = self._sem_cache.get(key)
        if hit is not None and hit[0] is c:
            return hit[1]
        out = self._build(c, kind, fuel)
        self._sem_cache[key] = (c, out)
        return out

    def _build(self, c: Command, kind: str, fuel: int) -> Pred:
        ok = kind == "ok"
        match c:
            case Spec(p):
                return PTrue() if ok else p
            case Assume(a):
                return a if ok else PTrue()
            case Disj(s, t):
                if ok:
                    return mk_and(self._sem(s, "ok", fuel), self._sem(t, "ok", fuel))
                return mk_or(self._sem(s, "ef", fuel), self._sem(t, "ef", fuel))
            case Par(s, t):
                return mk_and(self._sem(s, kind, fuel), self._sem(t, kind, fuel))
            case Seq(s, t):
                if ok:
                    return mk_and(self._sem(s, "ok", fuel),
                                  mk_implies(self._sem(s, "ef", fuel), self._sem(t, "ok", fuel)))
                return mk_and(self._sem(s, "ef", fuel), self._sem(t, "ef", fuel))
            case CExists(v, ty, body):
                cls = PForall if ok else PExists
                return _quant(cls, v, ty, self._sem(body, kind, fuel))
            case CForall(v, ty, body):
                return _quant(PForall, v, ty, self._sem(body, kind, fuel))
            case Call():
                self.proc(c.name)
                return CallSem(kind, c, fuel, self)
            case Demon() | GenDemon() | Magic():
                raise DemonicError(f"{kind} is undefined for the demonic command {pp_command(c)}")
        raise TypeError(f"not a command: {c!r}")

    def proc(self, name: str) -> ProcedureDef:
        try:
            return self.procs[name]
        except KeyError:
            raise EvalError(f"call to undefined procedure {name}") from None

    def _compile_call(self, node: CallSem, ev: Evaluator):
        proc = self.proc(node.call.name)
        formals = proc.formals
        if len(formals) != len(node.call.args):
            raise EvalError(f"{proc.name} expects {len(formals)} arguments, got {len(node.call.args)}")
        extra = free_vars(proc.body) - set(formals) - set(self.dom.consts)
        if extra:
            raise EvalError(f"body of {proc.name} mentions undeclared variables {sorted(extra)}")
        arg_fns = [ev.term(a) for a in node.call.args]
        fuel, kind, name = node.fuel, node.kind, proc.name
        fallback: list = []

        def body_fn():
            key = (id(ev), name, kind, fuel)
            hit = self._bodies.get(key)
            if hit is None or hit[0] is not ev:
                hit = (ev, ev.pred(self._sem(proc.body, kind, fuel - 1)))
                self._bodies[key] = hit
            return hit[1]

        def substituted(e):
            # an actual has no value in the universe: unfold symbolically instead
            if not fallback:
                body = subst_many(proc.body, dict(zip(formals, node.call.args)))
                fallback.append(ev.pred(self._sem(body, kind, fuel - 1)))
            return fallback[0](e)

        memo: dict = {}

        def call(e):
            if fuel <= 0:
                raise FuelExhausted(f"fuel exhausted unfolding {name}")
            try:
                vals = tuple(f(e) for f in arg_fns)
            except OutOfDomain:
                return substituted(e)
            # a call's truth depends only on the argument values
            hit = memo.get(vals)
            if hit is None:
                hit = memo[vals] = body_fn()(dict(zip(formals, vals)))
            return hit
        return call

    def ok_ef(self, c: Command, binding: dict, fuel: Optional[int] = None) -> tuple[bool, bool]:
        e = dict(binding)
        ok = self.ev.pred(self.ok(c, fuel))(e)
        ef = self.ev.pred(self.ef(c, fuel))(e)
        return ok, ef

    def variables(self, *nodes: Node) -> list[str]:
        names: list[str] = []
        for n in nodes:
            for v in ordered_free_vars(n):
                if v not in names and v not in self.dom.consts:
                    names.append(v)
        return names

    # ----- refinement -----

    def refines(self, s: Command, t: Command, context: Optional[Pred] = None) -> RefinesReport:
        """s is refined by t: ok.s entails ok.t and, under ok.s, ef.s <=> ef.t."""
        ds, dt = is_demonic(s), is_demonic(t)
        if ds and dt:
            raise DemonicError("demonic constructs on both sides of a refinement are not supported")
        if ds:
            return self.refines_demonic(s, t, context)
        if dt:
            return self._refined_by_demonic(s, t, context)
        return self._plain(s, t, context)

    def refines_in_context(self, a: Pred, s: Command, t: Command) -> RefinesReport:
        return self.refines(Seq(Assume(a), s), Seq(Assume(a), t))

    def refeq(self, s: Command, t: Command) -> tuple[RefinesReport, RefinesReport]:
        return self.refines(s, t), self.refines(t, s)

    def equivalent(self, s: Command, t: Command) -> bool:
        a, b = self.refeq(s, t)
        return a.holds and b.holds

    def answers(self, c: Command, variables: Optional[list[str]] = None) -> list[dict]:
        """Bindings of the given variables (default: all free) at which c succeeds."""
        ef = self.ef(c)
        vs = variables if variables is not None else self.variables(c)
        ent = self.entailment()
        return ent.solutions(ef, vs)

    # ----- demonic choice -----

    def branches(self, c: Command) -> list[Command]:
        """Resolve binary choices and magic; generalised choices are kept."""
        match c:
            case Demon(a, b):
                return self.branches(a) + self.branches(b)
            case Magic():
                return []
            case CExists(v, ty, body) | CForall(v, ty, body):
                return [type(c)(v, ty, b) for b in self.branches(body)]
        if isinstance(c, BINARY_COMMANDS):
            return [type(c)(a, b) for a in self.branches(c.lhs) for b in self.branches(c.rhs)]
        return [c]

    def resolutions(self, c: Command, binding: Optional[dict] = None) -> list[Command]:
        """Demonic-free commands c may stand for.

        A generalised choice contributes one command per value satisfying its
        guard; the guard's other variables are read from ``binding`` when given
        and otherwise only need some satisfying valuation.
        """
        out: list[Command] = []
        for br in self.branches(c):
            found = _find_gendemon(br)
            if not found:
                out.append(br)
                continue
            if len(found) > 1:
                raise DemonicError("at most one generalised choice per branch is supported")
            path, g, _ = found[0]
            ty = self.ev.binder_type(g.var, g.type)
            ctx_vars = [v for v in ordered_free_vars(g.guard) if v != g.var and v not in self.dom.consts]
            gfn = self.ev.pred(g.guard)
            if binding is not None:
                envs = [dict(binding)]
            else:
                envs = [dict(zip(ctx_vars, vals)) for vals in
                        itertools.product(*(self.dom.scope(self.env[v]) for v in ctx_vars))]
            seen = []
            for u in self.dom.carrier(ty):
                if any(gfn({**e, g.var: u}) for e in envs):
                    seen.append(u)
            for u in seen:
                out.append(replace(br, path, subst_many(g.body, {g.var: value_to_term(u)})))
        return out

    def refines_demonic(self, d: Command, t: Command, context: Optional[Pred] = None) -> RefinesReport:
        """Some resolution of d is refined by t."""
        if is_demonic(t):
            raise DemonicError("the implementation side of a refinement must be demonic-free")
        start = time.perf_counter()
        branches = self.branches(d)
        if not branches:
            return RefinesReport("fails", note="miracle: no implementable resolution",
                                 wall_ms=_ms(start))
        last: Optional[RefinesReport] = None
        total = 0
        for i, br in enumerate(branches):
            found = _find_gendemon(br)
            if not found:
                r = self.refines(br, t, context)
                total += r.checked
                if r.holds:
                    r.witness = {"branch": i, "resolution": pp_command(br)}
                    r.checked, r.wall_ms = total, _ms(start)
                    return r
                last = r
                continue
            if len(found) > 1:
                raise DemonicError("at most one generalised choice per branch is supported")
            r = self._choose(br, found[0], t, context)
            total += r.checked
            if r.holds:
                r.checked, r.wall_ms = total, _ms(start)
                if isinstance(r.witness, dict):
                    r.witness["branch"] = i
                return r
            last = r
        assert last is not None
        last.checked, last.wall_ms = total, _ms(start)
        return last

    def _open_choice(self, br: Command, found, other: Command):
        """The branch with the choice variable left free, renamed apart if needed."""
        path, g, bound = found
        ctx_vars = [v for v in ordered_free_vars(g.guard) if v != g.var and v not in self.dom.consts]
        clash = [v for v in ctx_vars if v in bound]
        if clash:
            raise DemonicError(f"guard depends on locally bound variables {clash}")
        x = g.var
        taken = free_vars(br) | free_vars(other) | set(self.env) | set(self.dom.consts)
        if x in taken:
            x = fresh_name(g.var, taken)
        guard = subst_many(g.guard, {g.var: Var(x)})
        body = subst_many(g.body, {g.var: Var(x)})
        opened = replace(br, path, body)
        ty = self.ev.binder_type(g.var, g.type)
        if x not in self.env:
            self.declare({x: ty})
        return x, ty, guard, opened, ctx_vars

    def _choose(self, br: Command, found, t: Command, context: Optional[Pred]) -> RefinesReport:
        x, ty, guard, opened, ctx_vars = self._open_choice(br, found, t)
        ok_s, ef_s, ok_t, ef_t = self.ok(opened), self.ef(opened), self.ok(t), self.ef(t)
        hyp = ok_s if context is None else mk_and(context, ok_s)
        goals = [ok_t, Iff(ef_s, ef_t)]
        gfn = self.ev.pred(guard)
        ent = self.entailment()
        candidates = self.dom.carrier(ty)
        table: list[Choice] = []
        checked = 0
        last_fail = None
        for vals in itertools.product(*(self.dom.scope(self.env[v]) for v in ctx_vars)):
            fixed = dict(zip(ctx_vars, vals))
            picked = False
            any_guard = False
            for u in candidates:
                checked += 1
                if checked > self.budget:
                    raise BudgetExceeded("enumeration budget exceeded", checked)
                if not gfn({**fixed, x: u}):
                    continue
                any_guard = True
                res = ent.check(hyp, goals, fixed={**fixed, x: u})
                checked += res.checked
                if res.holds:
                    table.append(Choice(fixed, u))
                    picked = True
                    break
                last_fail = res
            if not any_guard:
                return RefinesReport("fails", counterexample=fixed, checked=checked,
                                     note="empty guard: the choice is magic here")
            if not picked:
                cex = dict(fixed)
                clause = None
                if last_fail is not None and last_fail.counterexample:
                    cex.update({k: v for k, v in last_fail.counterexample.items() if k != x})
                    clause = ("ok", "ef")[last_fail.failed_goal]
                return RefinesReport("fails", clause=clause, counterexample=cex, checked=checked,
                                     note="no value satisfying the guard is refined by the target")
        witness = {"variable": found[1].var,
                   "choices": [{"context": {k: format_value(v) for k, v in ch.context.items()},
                                "value": format_value(ch.value)} for ch in table]}
        return RefinesReport("refines", checked=checked, witness=witness, choices=table)

    def _refined_by_demonic(self, s: Command, d: Command, context: Optional[Pred]) -> RefinesReport:
        """s is refined by every resolution of d."""
        start = time.perf_counter()
        total = 0
        for br in self.branches(d):
            found = _find_gendemon(br)
            if not found:
                r = self._plain(s, br, context)
                total += r.checked
                if not r.holds:
                    r.checked, r.wall_ms = total, _ms(start)
                    return r
                continue
            if len(found) > 1:
                raise DemonicError("at most one generalised choice per branch is supported")
            x, ty, guard, opened, ctx_vars = self._open_choice(br, found[0], s)
            hyp = mk_and(guard, self.ok(s))
            if context is not None:
                hyp = mk_and(context, hyp)
            res = self.entailment().check(hyp, [self.ok(opened), Iff(self.ef(s), self.ef(opened))])
            total += res.checked
            if not res.holds:
                return RefinesReport("fails", ("ok", "ef")[res.failed_goal], res.counterexample,
                                     total, _ms(start))
        return RefinesReport("refines", checked=total, wall_ms=_ms(start))

    def _plain(self, s: Command, t: Command, context: Optional[Pred]) -> RefinesReport:
        start = time.perf_counter()
        ok_s = self.ok(s)
        hyp = ok_s if context is None else mk_and(context, ok_s)
        res = self.entailment().check(hyp, [self.ok(t), Iff(self.ef(s), self.ef(t))])
        return _report(res, start)


def _find_gendemon(c: Command, path: tuple = (), bound: frozenset = frozenset()):
    out = []
    if isinstance(c, GenDemon):
        if is_demonic(c.body):
            raise DemonicError("nested demonic choice inside a generalised choice")
        return [(path, c, bound)]
    inner = bound | {c.var} if isinstance(c, (CExists, CForall)) else bound
    for i, ch in enumerate(children(c)):
        if isinstance(ch, Command):
            out += _find_gendemon(ch, path + (i,), inner)
    return out


def _report(res, start) -> RefinesReport:
    if res.holds:
        return RefinesReport("refines", checked=res.checked, wall_ms=_ms(start))
    return RefinesReport("fails", ("ok", "ef")[res.failed_goal], res.counterexample,
                         res.checked, _ms(start))


def _ms(start: float) -> float:
    return round((time.perf_counter() - start) * 1000, 3)

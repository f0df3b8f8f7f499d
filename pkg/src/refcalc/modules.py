"""Modules with an opaque type: program shape, Condition combined, call replacement.

A program uses a module properly when every opaque variable it touches is
produced by a module call with a freshly quantified output and consumed only
as an opaque input of later calls. ``check_opaque_form`` decides this shape.
``gen_combined`` builds the four-part obligation relating an abstract and a
concrete procedure through a coupling invariant; ``check_module_refinement``
discharges it by enumeration for each procedure pair.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .domain import (
    BudgetExceeded, DomainConfig, EvalError, Entailment, FuelExhausted, format_value,
)
from .semantics import RefinesReport, Semantics, conj, mk_and, mk_implies, _report
from .syntax import (
    Assume, BINARY_COMMANDS, CExists, CForall, Call, Command, Coupling, Demon, GenDemon, Iff,
    Magic, ModuleDecl, NamedT, Param, PExists, Pred, ProcedureDef, PTrue, Seq, ShapeError, Spec,
    TypeExpr, Var, free_vars, fresh_name, pp_command, pp_pred, subst_many,
)
from .syntax.ast import split_shape


class ModuleError(ValueError):
    pass


# ----- loading -----

def bind_module_types(dom: DomainConfig, *mods: ModuleDecl) -> DomainConfig:
    """A copy of dom that also knows the modules' opaque types."""
    out = dom.copy()
    for m in mods:
        if m.opaque_type is None:
            if m.opaque not in out.aliases:
                raise ModuleError(f"module {m.name}: opaque type {m.opaque} has no definition")
            continue
        known = out.aliases.get(m.opaque)
        if known is not None and out.resolve(known) != out.resolve(m.opaque_type):
            raise ModuleError(f"module {m.name}: opaque type {m.opaque} disagrees with the domain")
        if known is None:
            out.add_alias(m.opaque, m.opaque_type)
    return out


def is_opaque_param(m: ModuleDecl, q: Param) -> bool:
    return q.mode in ("in", "out")


# ----- opaque form -----

@dataclass
class OpaqueFormReport:
    accepted: bool
    rule: Optional[str] = None          # "form 1" | "form 2" | "form 3" | "program"
    path: tuple[int, ...] = ()
    iv: tuple[str, ...] = ()
    message: str = ""

    @property
    def verdict(self) -> str:
        return "accepted" if self.accepted else "rejected"

    def describe(self) -> str:
        if self.accepted:
            return "accepted: program is in opaque form"
        iv = "{" + ", ".join(self.iv) + "}"
        return f"rejected ({self.rule}) at path {list(self.path)} with IV = {iv}: {self.message}"

    def to_json(self) -> dict:
        return {"verdict": self.verdict, "rule": self.rule, "path": list(self.path),
                "iv": list(self.iv), "message": self.message}


class _Reject(Exception):
    def __init__(self, rule: str, path: tuple, iv: frozenset, message: str):
        super().__init__(message)
        self.report = OpaqueFormReport(False, rule, path, tuple(sorted(iv)), message)


class _FormChecker:
    def __init__(self, m: ModuleDecl, env: Mapping[str, TypeExpr]):
        self.m = m
        self.env = env
        self.opaque_names = {m.opaque}

    def module_proc(self, c: Command) -> Optional[ProcedureDef]:
        if isinstance(c, Call) and self.m.has_proc(c.name):
            return self.m.proc(c.name)
        return None

    def has_module_calls(self, c: Command) -> bool:
        if self.module_proc(c):
            return True
        return any(self.has_module_calls(k) for k in _subcommands(c))

    def opaque_binder(self, v: str, ty: Optional[TypeExpr], body: Command) -> bool:
        if ty is not None:
            return isinstance(ty, NamedT) and ty.name in self.opaque_names
        if v in self.env:
            t = self.env[v]
            return isinstance(t, NamedT) and t.name in self.opaque_names
        return v in self.opaque_uses(body)

    def opaque_uses(self, c: Command) -> set[str]:
        """Variables passed in opaque positions of module calls inside c."""
        out: set[str] = set()
        p = self.module_proc(c)
        if p is not None:
            for q, a in zip(p.params, c.args):
                if is_opaque_param(self.m, q):
                    out |= free_vars(a)
        for k in _subcommands(c):
            out |= self.opaque_uses(k)
        return out

    def declared_opaque(self, names: Iterable[str]) -> set[str]:
        return {v for v in names if isinstance(self.env.get(v), NamedT)
                and self.env[v].name in self.opaque_names}

    def check(self, c: Command, iv: frozenset, path: tuple) -> None:
        if not self.has_module_calls(c):
            fv = free_vars(c)
            bad = sorted((fv & iv) | self.declared_opaque(fv) | self._bound_opaque(c))
            if bad:
                raise _Reject("form 1", path, iv,
                              f"fragment {pp_command(c)} uses opaque variable(s) {', '.join(bad)} "
                              f"outside module procedures")
            return
        if self._try_call(c, iv, path):
            return
        match c:
            case CExists(v, ty, body) | CForall(v, ty, body):
                if self.opaque_binder(v, ty, body):
                    raise _Reject("form 2" if isinstance(c, CForall) else "form 3", path, iv,
                                  f"opaque variable {v} is quantified but not as the fresh output "
                                  f"of a module call")
                if v in iv:
                    iv = iv - {v}
                self.check(body, iv, path + (0,))
                return
            case Seq(lhs, rhs) if self.module_proc(lhs) is not None:
                p = self.module_proc(lhs)
                if p.by_mode("out"):
                    raise _Reject("form 3", path + (0,), iv,
                                  f"call {pp_command(lhs)} has opaque outputs that are not "
                                  f"existentially quantified around it")
                self._check_args(lhs, p, iv, path + (0,), ())
                self.check(rhs, iv, path + (1,))
                return
        if isinstance(c, BINARY_COMMANDS) and not isinstance(c, Demon):
            self.check(c.lhs, iv, path + (0,))
            self.check(c.rhs, iv, path + (1,))
            return
        if isinstance(c, Call):
            p = self.module_proc(c)
            if p is not None and p.by_mode("out"):
                raise _Reject("form 3", path, iv,
                              f"call {pp_command(c)} has opaque outputs that are not "
                              f"existentially quantified around it")
            if p is not None:
                self._check_args(c, p, iv, path, ())
                return
        raise _Reject("form 2", path, iv, f"{pp_command(c)} is not a permitted connective "
                                          f"around module calls")

    def _bound_opaque(self, c: Command) -> set[str]:
        out = set()
        if isinstance(c, (CExists, CForall)) and c.type is not None and self.opaque_binder(c.var, c.type, c.body):
            out.add(c.var)
        for k in _subcommands(c):
            out |= self._bound_opaque(k)
        return out

    def _try_call(self, c: Command, iv: frozenset, path: tuple) -> bool:
        """Form 3: ex O.(p(V, I, O), C), possibly with several outputs or no C."""
        outs: list[str] = []
        node, depth = c, 0
        while isinstance(node, CExists):
            outs.append(node.var)
            node = node.body
            depth += 1
            if self._call_head(node) is not None:
                break
        head = self._call_head(node)
        if not outs or head is None:
            return False
        call, rest = head
        p = self.module_proc(call)
        actual_outs = [a.name for q, a in zip(p.params, call.args)
                       if q.mode == "out" and isinstance(a, Var)]
        if set(outs) != set(actual_outs):
            return False
        call_path = path + (0,) * depth + ((0,) if rest is not None else ())
        self._check_args(call, p, iv, call_path, tuple(outs))
        if rest is not None:
            self.check(rest, iv | set(outs), path + (0,) * depth + (1,))
        return True

    def _call_head(self, node: Command):
        if self.module_proc(node) is not None:
            return node, None
        if isinstance(node, Seq) and self.module_proc(node.lhs) is not None:
            return node.lhs, node.rhs
        return None

    def _check_args(self, call: Call, p: ProcedureDef, iv: frozenset, path: tuple,
                    quantified: tuple[str, ...]) -> None:
        if len(call.args) != len(p.params):
            raise _Reject("form 3", path, iv, f"call {pp_command(call)} has {len(call.args)} arguments, "
                                              f"{p.name} takes {len(p.params)}")
        outs: list[str] = []
        opaque_all = iv | set(quantified)
        for q, a in zip(p.params, call.args):
            if q.mode == "reg":
                bad = sorted(free_vars(a) & (opaque_all | self.declared_opaque(free_vars(a))))
                if bad:
                    raise _Reject("form 3", path, iv, f"regular argument {q.name} of {p.name} mentions "
                                                      f"opaque variable(s) {', '.join(bad)}")
                continue
            if not isinstance(a, Var):
                raise _Reject("form 3", path, iv, f"opaque argument {q.name} of {p.name} must be a variable")
            if q.mode == "in":
                if a.name not in iv:
                    raise _Reject("form 3", path, iv, f"opaque input {a.name} of {p.name} is not in IV")
            else:
                if a.name in outs:
                    raise _Reject("form 3", path, iv, f"opaque output {a.name} of {p.name} is repeated")
                if a.name not in quantified:
                    raise _Reject("form 3", path, iv, f"opaque output {a.name} of {p.name} is not a fresh "
                                                      f"existentially quantified variable")
                outs.append(a.name)
        extra = [v for v in quantified if v not in outs]
        if extra:
            raise _Reject("form 3", path, iv, f"quantified variable(s) {', '.join(extra)} are not "
                                              f"outputs of {p.name}")


def _subcommands(c: Command) -> list[Command]:
    if isinstance(c, (CExists, CForall)):
        return [c.body]
    if isinstance(c, GenDemon):
        return [c.body]
    if isinstance(c, BINARY_COMMANDS):
        return [c.lhs, c.rhs]
    return []


def check_opaque_form(prog: Command, m: ModuleDecl,
                      env: Optional[Mapping[str, TypeExpr]] = None) -> OpaqueFormReport:
    """Is prog in opaque form with respect to m (and closed over opaque variables)?

    ``env`` types free variables; a free variable of the opaque type is a
    violation wherever it is used.
    """
    checker = _FormChecker(m, dict(env or {}))
    try:
        checker.check(prog, frozenset(), ())
    except _Reject as r:
        return r.report
    free_opaque = sorted(checker.declared_opaque(free_vars(prog)))
    if free_opaque:
        return OpaqueFormReport(False, "program", (), (), f"free opaque variable(s) {', '.join(free_opaque)}")
    return OpaqueFormReport(True)


# ----- coupling invariants and Condition combined -----

def apply_ci(ci: Coupling, abs_term, conc_term) -> Pred:
    return subst_many(ci.pred, {ci.abs_var: abs_term, ci.conc_var: conc_term})


def ci_pointwise(ci: Coupling, abs_vars: Sequence[str], conc_vars: Sequence[str]) -> Pred:
    return conj(apply_ci(ci, Var(a), Var(c)) for a, c in zip(abs_vars, conc_vars))


def _exists_all(vars_types: Sequence[tuple[str, TypeExpr]], body: Pred) -> Pred:
    for v, t in reversed(vars_types):
        body = PExists(v, t, body)
    return body


@dataclass
class ProcPair:
    """An abstract procedure and the concrete one, renamed to share regular formals."""
    abs: ProcedureDef
    conc: ProcedureDef

    @property
    def regular(self) -> tuple[Param, ...]:
        return self.abs.by_mode("reg")


def align(p: ProcedureDef, pplus: ProcedureDef) -> ProcPair:
    """Rename pplus so its regular formals match p and its opaque formals are distinct."""
    for q in (p, pplus):
        try:
            split_shape(q.body)
        except ShapeError:
            raise ModuleError(f"procedure {q.name} is not of the form {{A}},[P]") from None
    modes = [q.mode for q in p.params]
    if sorted(modes) != sorted(q.mode for q in pplus.params) or [m for m in modes if m == "reg"] != [
            q.mode for q in pplus.params if q.mode == "reg"]:
        raise ModuleError(f"parameter modes of {p.name} and {pplus.name} do not align")
    regs_a, regs_c = p.by_mode("reg"), pplus.by_mode("reg")
    for a, c in zip(regs_a, regs_c):
        if a.type != c.type:
            raise ModuleError(f"regular parameter {a.name} of {p.name} has type {a.type}, "
                              f"but {c.name} of {pplus.name} has {c.type}")
    ren: dict[str, str] = {c.name: a.name for a, c in zip(regs_a, regs_c)}
    taken = set(p.formals) | set(ren.values())
    for q in pplus.params:
        if q.mode != "reg":
            name = q.name
            if name in taken:
                name = fresh_name(name, taken | set(pplus.formals))
            ren[q.name] = name
            taken.add(name)
    if all(k == v for k, v in ren.items()):
        return ProcPair(p, pplus)
    params = tuple(Param(ren[q.name], q.type, q.mode) for q in pplus.params)
    body = subst_many(pplus.body, {k: Var(v) for k, v in ren.items() if k != v})
    return ProcPair(p, ProcedureDef(pplus.name, params, body))


@dataclass
class CombinedObligation:
    abs_name: str
    conc_name: str
    premise: Pred
    no_abort: Pred              # A+
    step_abs: Pred              # P => ex O+. P+ /\ CI(O, O+)
    step_conc: Pred             # P+ => ex O. P /\ CI(O, O+)
    env: dict[str, TypeExpr] = field(default_factory=dict)

    @property
    def goals(self) -> list[Pred]:
        return [self.no_abort, self.step_abs, self.step_conc]

    @property
    def goal(self) -> Pred:
        return mk_implies(self.premise, conj(self.goals))

    def text(self) -> str:
        parts = " /\\\n    ".join(f"({pp_pred(g)})" for g in self.goals)
        return f"{pp_pred(self.premise)} |=\n    {parts}"


PART_NAMES = ("concrete assumption", "abstract answers have concrete counterparts",
              "concrete answers have abstract counterparts")


def gen_combined(p: ProcedureDef, pplus: ProcedureDef, ci: Coupling) -> CombinedObligation:
    pair = align(p, pplus)
    p, pplus = pair.abs, pair.conc
    a, pa = split_shape(p.body)
    ac, pc = split_shape(pplus.body)
    ins = [q.name for q in p.by_mode("in")]
    ins_c = [q.name for q in pplus.by_mode("in")]
    outs = [(q.name, q.type) for q in p.by_mode("out")]
    outs_c = [(q.name, q.type) for q in pplus.by_mode("out")]
    if len(ins) != len(ins_c) or len(outs) != len(outs_c):
        raise ModuleError(f"opaque parameters of {p.name} and {pplus.name} do not align")
    ci_out = ci_pointwise(ci, [v for v, _ in outs], [v for v, _ in outs_c])
    premise = mk_and(ci_pointwise(ci, ins, ins_c), a) if ins else a
    step_abs = mk_implies(pa, _exists_all(outs_c, mk_and(pc, ci_out)))
    step_conc = mk_implies(pc, _exists_all(outs, mk_and(pa, ci_out)))
    env = {q.name: q.type for q in p.params}
    env.update({q.name: q.type for q in pplus.params})
    return CombinedObligation(p.name, pplus.name, premise, ac, step_abs, step_conc, env)


@dataclass
class ProcReport:
    name: str
    conc_name: str
    verdict: str                    # "pass" | "fail" | "error"
    obligation: Optional[CombinedObligation] = None
    failed_part: Optional[str] = None
    counterexample: Optional[dict] = None
    checked: int = 0
    wall_ms: float = 0.0
    message: str = ""

    def to_json(self) -> dict:
        return {"procedure": self.name, "concrete": self.conc_name, "verdict": self.verdict,
                "goal": self.obligation.text() if self.obligation else None,
                "failed_part": self.failed_part,
                "counterexample": None if self.counterexample is None else
                {k: format_value(v) for k, v in self.counterexample.items()},
                "bindings_checked": self.checked, "message": self.message or None}


@dataclass
class ModuleReport:
    procedures: list[ProcReport]

    @property
    def passed(self) -> bool:
        return all(r.verdict == "pass" for r in self.procedures)

    @property
    def checked(self) -> int:
        return sum(r.checked for r in self.procedures)


def discharge_combined(ob: CombinedObligation, dom: DomainConfig, *,
                       budget: Optional[int] = None, jobs: int = 1) -> ProcReport:
    start = time.perf_counter()
    try:
        ent = Entailment(dom, ob.env, budget=budget, jobs=jobs)
        res = ent.check(ob.premise, ob.goals)
    except BudgetExceeded as e:
        return ProcReport(ob.abs_name, ob.conc_name, "error", ob, checked=e.checked,
                          wall_ms=_ms(start), message="enumeration budget exceeded")
    except (EvalError, FuelExhausted) as e:
        return ProcReport(ob.abs_name, ob.conc_name, "error", ob, wall_ms=_ms(start), message=str(e))
    if res.holds:
        return ProcReport(ob.abs_name, ob.conc_name, "pass", ob, checked=res.checked, wall_ms=_ms(start))
    return ProcReport(ob.abs_name, ob.conc_name, "fail", ob, PART_NAMES[res.failed_goal],
                      res.counterexample, res.checked, _ms(start))


def check_module_refinement(abs_mod: ModuleDecl, conc_mod: ModuleDecl, ci: Coupling,
                            dom: DomainConfig, *, pairing: Optional[Mapping[str, str]] = None,
                            budget: Optional[int] = None, jobs: int = 1) -> ModuleReport:
    """Condition combined for every procedure of abs_mod, in declaration order."""
    dom = bind_module_types(dom, abs_mod, conc_mod)
    reports = []
    for p in abs_mod.procs:
        cname = (pairing or {}).get(p.name, p.name)
        if not conc_mod.has_proc(cname):
            reports.append(ProcReport(p.name, cname, "error",
                                      message=f"module {conc_mod.name} has no procedure {cname}"))
            continue
        try:
            ob = gen_combined(p, conc_mod.proc(cname), ci)
        except ModuleError as e:
            reports.append(ProcReport(p.name, cname, "error", message=str(e)))
            continue
        reports.append(discharge_combined(ob, dom, budget=budget, jobs=jobs))
    return ModuleReport(reports)


def naive_contextual_check(p: ProcedureDef, pplus: ProcedureDef, ci: Coupling,
                           dom: DomainConfig, *, budget: Optional[int] = None
                           ) -> tuple[RefinesReport, RefinesReport]:
    """Both directions of refinement of p and pplus under CI on inputs and outputs.

    This is the direct equivalence one might try before Condition combined;
    it is too strong whenever an abstract value has several representations.
    """
    pair = align(p, pplus)
    ins = [q.name for q in pair.abs.by_mode("in")] + [q.name for q in pair.abs.by_mode("out")]
    ins_c = [q.name for q in pair.conc.by_mode("in")] + [q.name for q in pair.conc.by_mode("out")]
    ctx = ci_pointwise(ci, ins, ins_c)
    env = {q.name: q.type for q in pair.abs.params + pair.conc.params}
    sem = Semantics(dom, (), env, budget=budget)
    return (sem.refines_in_context(ctx, pair.abs.body, pair.conc.body),
            sem.refines_in_context(ctx, pair.conc.body, pair.abs.body))


# ----- call replacement -----

def replace_calls(prog: Command, abs_mod: ModuleDecl, conc_mod: ModuleDecl, *,
                  pairing: Optional[Mapping[str, str]] = None,
                  env: Optional[Mapping[str, TypeExpr]] = None) -> Command:
    """The same program with abs_mod's calls sent to conc_mod and opaque binders retyped."""
    rep = check_opaque_form(prog, abs_mod, env)
    if not rep.accepted:
        raise ModuleError("program is not in opaque form: " + rep.describe())
    names = {p.name: (pairing or {}).get(p.name, p.name) for p in abs_mod.procs}
    for n in names.values():
        if not conc_mod.has_proc(n):
            raise ModuleError(f"module {conc_mod.name} has no procedure {n}")
    return _replace(prog, abs_mod, names, NamedT(conc_mod.opaque))


def _replace(c: Command, m: ModuleDecl, names: dict, conc_type: TypeExpr) -> Command:
    match c:
        case Call(name, args) if m.has_proc(name):
            return Call(names[m.proc(name).name], args, span=c.span)
        case CExists(v, ty, body) | CForall(v, ty, body):
            if isinstance(ty, NamedT) and ty.name == m.opaque:
                ty = conc_type
            return type(c)(v, ty, _replace(body, m, names, conc_type), span=c.span)
        case GenDemon(v, ty, g, body):
            return GenDemon(v, ty, g, _replace(body, m, names, conc_type), span=c.span)
    if isinstance(c, BINARY_COMMANDS):
        return type(c)(_replace(c.lhs, m, names, conc_type), _replace(c.rhs, m, names, conc_type),
                       span=c.span)
    return c


def refines_across(dom: DomainConfig, s: Command, s_procs: Iterable[ProcedureDef],
                   t: Command, t_procs: Iterable[ProcedureDef],
                   env: Optional[Mapping[str, TypeExpr]] = None, *, fuel: Optional[int] = None,
                   budget: Optional[int] = None, jobs: int = 1) -> RefinesReport:
    """s (calling s_procs) is refined by t (calling t_procs).

    The two sides may use procedures with the same names, so each side gets its
    own procedure table and the entailment sees both sets of formals.
    """
    start = time.perf_counter()
    sem_s = Semantics(dom, s_procs, dict(env or {}), fuel=fuel, budget=budget, jobs=jobs)
    sem_t = Semantics(dom, t_procs, dict(env or {}), fuel=fuel, budget=budget, jobs=jobs)
    ok_s, ef_s, ok_t, ef_t = sem_s.ok(s), sem_s.ef(s), sem_t.ok(t), sem_t.ef(t)
    both = {**sem_s.env, **sem_t.env}
    ent = Entailment(dom, both, budget=sem_s.budget, jobs=jobs)
    res = ent.check(ok_s, [ok_t, Iff(ef_s, ef_t)])
    return _report(res, start)


def program_answers(dom: DomainConfig, prog: Command, procs: Iterable[ProcedureDef],
                    env: Optional[Mapping[str, TypeExpr]] = None, *,
                    fuel: Optional[int] = None, budget: Optional[int] = None) -> list[dict]:
    sem = Semantics(dom, procs, dict(env or {}), fuel=fuel, budget=budget)
    return sem.answers(prog)


def _ms(start: float) -> float:
    return round((time.perf_counter() - start) * 1000, 3)

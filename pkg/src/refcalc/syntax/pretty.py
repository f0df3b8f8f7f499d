"""Pretty printer producing text that parses back to the same tree."""
from __future__ import annotations

from .ast import (
    And, App, Assume, AtomsT, BoolT, CExists, CForall, Call, Command, Comp, Cons, Coupling,
    Demon, Disj, FunT, GenDemon, Iff, Implies, Is, ListT, Lit, Magic, MapLit, MapT, ModuleDecl,
    NamedT, NatT, Nil, Not, OptT, Or, Par, PExists, PFalse, PForall, Pred, ProcedureDef, PTrue,
    Program, Rel, Seq, SetLit, SetT, Spec, Term, Tup, TupleT, TypeExpr, Var,
)

TERM_BINOPS = ("+", "-", "++", "(+)", "cup", "cap")
_PRED_SYM = {And: "/\\", Or: "\\/", Implies: "=>", Iff: "<=>"}
_CMD_SYM = {Seq: ",", Disj: "\\/", Par: "/\\", Demon: "|~|"}


def pp_type(t: TypeExpr) -> str:
    match t:
        case NatT(b):
            return f"nat<{b}>"
        case BoolT():
            return "bool"
        case AtomsT(names):
            return "atoms{" + ", ".join(names) + "}"
        case ListT(e, n):
            return f"list<{pp_type(e)}, {n}>"
        case SetT(e):
            return f"set<{pp_type(e)}>"
        case OptT(e):
            return f"opt<{pp_type(e)}>"
        case MapT(k, v):
            return f"map<{pp_type(k)}, {pp_type(v)}>"
        case FunT(k, v):
            return f"fun<{pp_type(k)}, {pp_type(v)}>"
        case TupleT(items):
            return "tuple<" + ", ".join(pp_type(i) for i in items) + ">"
        case NamedT(name):
            return name
    raise TypeError(f"not a type: {t!r}")


def _is_binop(t: Term) -> bool:
    return isinstance(t, App) and t.fn in TERM_BINOPS and len(t.args) == 2


def pp_term(t: Term) -> str:
    match t:
        case Var(name):
            return name
        case Lit(v):
            if isinstance(v, bool):
                return "true" if v else "false"
            return str(v)
        case Tup(items):
            return "(" + ", ".join(pp_term(i) for i in items) + ")"
        case Nil():
            return "[]"
        case Cons():
            items = []
            while isinstance(t, Cons):
                items.append(pp_term(t.head))
                t = t.tail
            body = ", ".join(items)
            return f"[{body}]" if isinstance(t, Nil) else f"[{body}|{pp_term(t)}]"
        case SetLit(items):
            return "{" + ", ".join(pp_term(i) for i in items) + "}"
        case MapLit(pairs):
            return "{" + ", ".join(f"{pp_term(k)} |-> {pp_term(v)}" for k, v in pairs) + "}"
        case Comp(pat, src, body):
            p = pat if isinstance(pat, str) else "(" + ", ".join(pat) + ")"
            if isinstance(src, TypeExpr):
                return "{" + f"{p} : {pp_type(src)} . {pp_term(body)}" + "}"
            return "{" + f"{p} in {pp_term(src)} . {pp_term(body)}" + "}"
        case App(fn, args) if _is_binop(t):
            lhs, rhs = args
            ls = pp_term(lhs)
            if _is_binop(lhs):
                ls = f"({ls})"
            rs = pp_term(rhs)
            if _is_binop(rhs) and (rhs.fn != fn or fn == "-"):
                rs = f"({rs})"
            return f"{ls} {fn} {rs}"
        case App("#", (arg,)):
            s = pp_term(arg)
            return f"#({s})" if _is_binop(arg) else f"#{s}"
        case App("apply", (f, arg)):
            fs = pp_term(f)
            if not isinstance(f, (Var, App, Comp, SetLit, MapLit)) or _is_binop(f) or (
                    isinstance(f, App) and f.fn == "#"):
                fs = f"({fs})"
            return f"{fs}({pp_term(arg)})"
        case App(fn, args):
            return f"{fn}(" + ", ".join(pp_term(a) for a in args) + ")"
    raise TypeError(f"not a term: {t!r}")


def _binder(name: str, ty) -> str:
    return name if ty is None else f"{name}:{pp_type(ty)}"


def pp_pred(p: Pred) -> str:
    match p:
        case PTrue():
            return "true"
        case PFalse():
            return "false"
        case Rel(op, lhs, rhs):
            return f"{pp_term(lhs)} {op} {pp_term(rhs)}"
        case Is(t, ty):
            return f"{pp_term(t)} in {pp_type(ty)}"
        case Not(body):
            s = pp_pred(body)
            if isinstance(body, (PTrue, PFalse, Not, PExists, PForall)):
                return f"~{s}"
            return f"~({s})"
        case PExists(v, ty, body):
            return f"ex {_binder(v, ty)}.({pp_pred(body)})"
        case PForall(v, ty, body):
            return f"all {_binder(v, ty)}.({pp_pred(body)})"
        case And() | Or() | Implies() | Iff():
            sym = _PRED_SYM[type(p)]
            ls = pp_pred(p.lhs)
            if type(p.lhs) in _PRED_SYM:
                ls = f"({ls})"
            rs = pp_pred(p.rhs)
            if type(p.rhs) in _PRED_SYM and type(p.rhs) is not type(p):
                rs = f"({rs})"
            return f"{ls} {sym} {rs}"
    if hasattr(p, "pretty"):
        return p.pretty()
    raise TypeError(f"not a predicate: {p!r}")


def pp_command(c: Command) -> str:
    match c:
        case Spec(p):
            return f"[{pp_pred(p)}]"
        case Assume(p):
            return "{" + pp_pred(p) + "}"
        case Magic():
            return "magic"
        case Call(name, args):
            return f"{name}(" + ", ".join(pp_term(a) for a in args) + ")"
        case CExists(v, ty, body):
            return f"ex {_binder(v, ty)}.({pp_command(body)})"
        case CForall(v, ty, body):
            return f"all {_binder(v, ty)}.({pp_command(body)})"
        case GenDemon(v, ty, g, body):
            return f"dch {_binder(v, ty)}.({pp_pred(g)} =>> {pp_command(body)})"
        case Seq() | Disj() | Par() | Demon():
            sym = _CMD_SYM[type(c)]
            ls = pp_command(c.lhs)
            if type(c.lhs) in _CMD_SYM:
                ls = f"({ls})"
            rs = pp_command(c.rhs)
            if type(c.rhs) in _CMD_SYM and type(c.rhs) is not type(c):
                rs = f"({rs})"
            return f"{ls}{sym} {rs}" if sym == "," else f"{ls} {sym} {rs}"
    raise TypeError(f"not a command: {c!r}")


def pp(node) -> str:
    if isinstance(node, Command):
        return pp_command(node)
    if isinstance(node, Pred):
        return pp_pred(node)
    if isinstance(node, Term):
        return pp_term(node)
    if isinstance(node, TypeExpr):
        return pp_type(node)
    if isinstance(node, ProcedureDef):
        return pp_proc(node)
    raise TypeError(f"cannot print {node!r}")


def pp_proc(p: ProcedureDef) -> str:
    params = ", ".join(
        (f"{q.mode} " if q.mode != "reg" else "") + f"{q.name}: {pp_type(q.type)}" for q in p.params)
    return f"proc {p.name}({params}) =\n    {pp_command(p.body)}"


def pp_module(m: ModuleDecl) -> str:
    head = f"opaque {m.opaque}" + (f" = {pp_type(m.opaque_type)}" if m.opaque_type else "")
    lines = [f"module {m.name}", f"  {head}", ""]
    for proc in m.procs:
        lines.append("  " + pp_proc(proc).replace("\n", "\n  "))
        lines.append("")
    lines.append("end")
    return "\n".join(lines) + "\n"


def pp_coupling(c: Coupling) -> str:
    out = (f"couple {c.abs_module}.{c.abs_type} as {c.abs_var} "
           f"with {c.conc_module}.{c.conc_type} as {c.conc_var} :\n  {pp_pred(c.pred)}\n")
    for lem in c.lemmas:
        ps = ", ".join(f"{n}: {pp_type(t)}" for n, t in lem.params)
        out += f"lemma ({ps}) : {pp_pred(lem.pred)}\n"
    return out


def pp_program(prog: Program) -> str:
    lines = [f"var {n} : {pp_type(t)}" for n, t in prog.vars]
    if lines:
        lines.append("")
    for proc in prog.procs:
        lines += [pp_proc(proc), ""]
    lines.append(pp_command(prog.command))
    return "\n".join(lines) + "\n"

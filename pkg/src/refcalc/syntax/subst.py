"""Free variables, capture-avoiding substitution and alpha-equivalence."""
from __future__ import annotations

import itertools
from typing import Iterable, Mapping, Union

from .ast import (
    App, Assume, BINARY_COMMANDS, BINARY_PREDS, CExists, CForall, Call, Command, Comp, Cons,
    GenDemon, Is, Lit, Magic, MapLit, Nil, Not, PExists, PFalse, PForall, Pred, PTrue, Rel,
    SetLit, Spec, Term, Tup, TypeExpr, Var,
)

Node = Union[Term, Pred, Command]


def _pattern_names(pat) -> tuple[str, ...]:
    return (pat,) if isinstance(pat, str) else tuple(pat)


def free_vars(n) -> set[str]:
    match n:
        case Var(name):
            return {name}
        case Lit() | Nil() | PTrue() | PFalse() | Magic():
            return set()
        case Tup(items) | SetLit(items):
            return set().union(*(free_vars(i) for i in items))
        case Cons(h, t):
            return free_vars(h) | free_vars(t)
        case MapLit(pairs):
            return set().union(*(free_vars(k) | free_vars(v) for k, v in pairs))
        case App(_, args):
            return set().union(*(free_vars(a) for a in args))
        case Comp(pat, src, body):
            outer = set() if isinstance(src, TypeExpr) else free_vars(src)
            return outer | (free_vars(body) - set(_pattern_names(pat)))
        case Rel(_, lhs, rhs):
            return free_vars(lhs) | free_vars(rhs)
        case Is(t, _):
            return free_vars(t)
        case Not(b):
            return free_vars(b)
        case PExists(v, _, b) | PForall(v, _, b) | CExists(v, _, b) | CForall(v, _, b):
            return free_vars(b) - {v}
        case Spec(p) | Assume(p):
            return free_vars(p)
        case Call(_, args):
            return set().union(*(free_vars(a) for a in args))
        case GenDemon(v, _, g, b):
            return (free_vars(g) | free_vars(b)) - {v}
    if isinstance(n, BINARY_PREDS) or isinstance(n, BINARY_COMMANDS):
        return free_vars(n.lhs) | free_vars(n.rhs)
    if hasattr(n, "free_vars"):
        return n.free_vars()
    raise TypeError(f"free_vars: unexpected {n!r}")


def ordered_free_vars(n) -> list[str]:
    """Free variables in order of first occurrence."""
    seen: dict[str, None] = {}
    _collect(n, set(), seen)
    return list(seen)


def _collect(n, bound: set[str], seen: dict) -> None:
    match n:
        case Var(name):
            if name not in bound:
                seen.setdefault(name)
        case Comp(pat, src, body):
            if not isinstance(src, TypeExpr):
                _collect(src, bound, seen)
            _collect(body, bound | set(_pattern_names(pat)), seen)
        case PExists(v, _, b) | PForall(v, _, b) | CExists(v, _, b) | CForall(v, _, b):
            _collect(b, bound | {v}, seen)
        case GenDemon(v, _, g, b):
            _collect(g, bound | {v}, seen)
            _collect(b, bound | {v}, seen)
        case _:
            for child in _children(n):
                _collect(child, bound, seen)


def _children(n) -> list:
    match n:
        case Tup(items) | SetLit(items):
            return list(items)
        case Cons(h, t):
            return [h, t]
        case MapLit(pairs):
            return [x for kv in pairs for x in kv]
        case App(_, args) | Call(_, args):
            return list(args)
        case Rel(_, lhs, rhs):
            return [lhs, rhs]
        case Is(t, _):
            return [t]
        case Not(b):
            return [b]
        case Spec(p) | Assume(p):
            return [p]
    if isinstance(n, BINARY_PREDS) or isinstance(n, BINARY_COMMANDS):
        return [n.lhs, n.rhs]
    if hasattr(n, "children"):
        return list(n.children())
    return []


def fresh_name(base: str, avoid: Iterable[str]) -> str:
    avoid = set(avoid)
    stem = base.rstrip("'").rstrip("0123456789") or "X"
    for i in itertools.count(1):
        cand = f"{stem}{i}"
        if cand not in avoid:
            return cand
    raise AssertionError


def substitute(n: Node, var: str, u: Term) -> Node:
    return subst_many(n, {var: u})


def subst_many(n: Node, sub: Mapping[str, Term]) -> Node:
    """Simultaneous capture-avoiding substitution of terms for variables."""
    sub = {k: v for k, v in sub.items()}
    if not sub:
        return n
    incoming = set().union(*(free_vars(t) for t in sub.values()))
    return _subst(n, sub, incoming)


def _binder(v: str, body_nodes: list, sub: dict, incoming: set[str]):
    """Returns (new var name, substitution for the body, incoming vars)."""
    inner = {k: t for k, t in sub.items() if k != v}
    if not inner:
        return v, inner, set()
    inc = set().union(*(free_vars(t) for t in inner.values()))
    if v in inc:
        body_fv = set().union(*(free_vars(b) for b in body_nodes))
        nv = fresh_name(v, inc | body_fv | set(inner))
        inner = dict(inner)
        inner[v] = Var(nv)
        return nv, inner, inc | {nv}
    return v, inner, inc


def _subst(n, sub: dict, incoming: set[str]):
    match n:
        case Var(name):
            return sub.get(name, n)
        case Lit() | Nil() | PTrue() | PFalse() | Magic():
            return n
        case Tup(items):
            return Tup(tuple(_subst(i, sub, incoming) for i in items), span=n.span)
        case SetLit(items):
            return SetLit(tuple(_subst(i, sub, incoming) for i in items), span=n.span)
        case Cons(h, t):
            return Cons(_subst(h, sub, incoming), _subst(t, sub, incoming), span=n.span)
        case MapLit(pairs):
            return MapLit(tuple((_subst(k, sub, incoming), _subst(v, sub, incoming)) for k, v in pairs),
                          span=n.span)
        case App(fn, args):
            return App(fn, tuple(_subst(a, sub, incoming) for a in args), span=n.span)
        case Comp(pat, src, body):
            new_src = src if isinstance(src, TypeExpr) else _subst(src, sub, incoming)
            names = list(_pattern_names(pat))
            inner = {k: t for k, t in sub.items() if k not in names}
            if inner:
                inc = set().union(*(free_vars(t) for t in inner.values()))
                for i, nm in enumerate(names):
                    if nm in inc:
                        nv = fresh_name(nm, inc | free_vars(body) | set(inner) | set(names))
                        inner[nm] = Var(nv)
                        names[i] = nv
                body = _subst(body, inner, inc)
            new_pat = names[0] if isinstance(pat, str) else tuple(names)
            return Comp(new_pat, new_src, body, span=n.span)
        case Rel(op, lhs, rhs):
            return Rel(op, _subst(lhs, sub, incoming), _subst(rhs, sub, incoming), span=n.span)
        case Is(t, ty):
            return Is(_subst(t, sub, incoming), ty, span=n.span)
        case Not(b):
            return Not(_subst(b, sub, incoming), span=n.span)
        case PExists(v, ty, b) | PForall(v, ty, b) | CExists(v, ty, b) | CForall(v, ty, b):
            nv, inner, inc = _binder(v, [b], sub, incoming)
            return type(n)(nv, ty, _subst(b, inner, inc) if inner else b, span=n.span)
        case GenDemon(v, ty, g, b):
            nv, inner, inc = _binder(v, [g, b], sub, incoming)
            if not inner:
                return n
            return GenDemon(nv, ty, _subst(g, inner, inc), _subst(b, inner, inc), span=n.span)
        case Spec(p):
            return Spec(_subst(p, sub, incoming), span=n.span)
        case Assume(p):
            return Assume(_subst(p, sub, incoming), span=n.span)
        case Call(name, args):
            return Call(name, tuple(_subst(a, sub, incoming) for a in args), span=n.span)
    if isinstance(n, BINARY_PREDS) or isinstance(n, BINARY_COMMANDS):
        return type(n)(_subst(n.lhs, sub, incoming), _subst(n.rhs, sub, incoming), span=n.span)
    if hasattr(n, "substitute"):
        return n.substitute(lambda x: _subst(x, sub, incoming))
    raise TypeError(f"substitute: unexpected {n!r}")


def rename_free(n: Node, mapping: Mapping[str, str]) -> Node:
    return subst_many(n, {k: Var(v) for k, v in mapping.items()})


def alpha_equal(a, b, env_a: dict | None = None, env_b: dict | None = None) -> bool:
    """Structural equality up to consistent renaming of bound variables."""
    return _alpha(a, b, env_a or {}, env_b or {}, [0])


def _alpha(a, b, ea: dict, eb: dict, counter: list) -> bool:
    if type(a) is not type(b):
        return False
    match a:
        case Var(name):
            x, y = ea.get(name), eb.get(b.name)
            if x is None and y is None:
                return name == b.name
            return x == y
        case PExists() | PForall() | CExists() | CForall():
            if a.type != b.type:
                return False
            counter[0] += 1
            k = counter[0]
            return _alpha(a.body, b.body, {**ea, a.var: k}, {**eb, b.var: k}, counter)
        case GenDemon():
            if a.type != b.type:
                return False
            counter[0] += 1
            k = counter[0]
            ea2, eb2 = {**ea, a.var: k}, {**eb, b.var: k}
            return _alpha(a.guard, b.guard, ea2, eb2, counter) and _alpha(a.body, b.body, ea2, eb2, counter)
        case Comp():
            pa, pb = _pattern_names(a.pattern), _pattern_names(b.pattern)
            if len(pa) != len(pb) or isinstance(a.pattern, str) != isinstance(b.pattern, str):
                return False
            if isinstance(a.src, TypeExpr) or isinstance(b.src, TypeExpr):
                if a.src != b.src:
                    return False
            elif not _alpha(a.src, b.src, ea, eb, counter):
                return False
            ea2, eb2 = dict(ea), dict(eb)
            for x, y in zip(pa, pb):
                counter[0] += 1
                ea2[x] = eb2[y] = counter[0]
            return _alpha(a.body, b.body, ea2, eb2, counter)
        case App(fn, args):
            return fn == b.fn and len(args) == len(b.args) and all(
                _alpha(x, y, ea, eb, counter) for x, y in zip(args, b.args))
        case Call(name, args):
            return name == b.name and len(args) == len(b.args) and all(
                _alpha(x, y, ea, eb, counter) for x, y in zip(args, b.args))
        case Rel(op):
            return op == b.op and _alpha(a.lhs, b.lhs, ea, eb, counter) and _alpha(a.rhs, b.rhs, ea, eb, counter)
        case Is(t, ty):
            return ty == b.type and _alpha(t, b.term, ea, eb, counter)
        case Lit(v):
            return v == b.value and type(v) is type(b.value)
    ca, cb = _children(a), _children(b)
    if not ca and not cb:
        return a == b
    return len(ca) == len(cb) and all(_alpha(x, y, ea, eb, counter) for x, y in zip(ca, cb))

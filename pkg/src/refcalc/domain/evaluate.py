"""Compilation of terms and predicates to Python closures over a binding dict.

A binding is a plain dict from variable names to values. Quantifiers and
comprehensions bind their variable in place and restore the previous value
afterwards, so compiled closures never copy the environment.
"""
from __future__ import annotations

import itertools
from typing import Callable, Optional

from ..syntax.ast import (
    And, App, Comp, Cons, Iff, Implies, Is, Lit, MapLit, Nil, Not, Or, PExists, PFalse, PForall,
    PTrue, Rel, SetLit, Tup, TypeExpr, Var,
)
from ..syntax.subst import free_vars
from .config import ConfigError, DomainConfig
from .values import LVal

_MISSING = object()


class OutOfDomain(Exception):
    """A term has no value inside the finite universe."""


class FuelExhausted(Exception):
    """Recursive unfolding ran deeper than the fuel allows."""

    def __init__(self, msg: str = "fuel exhausted", binding: Optional[dict] = None):
        super().__init__(msg)
        self.binding = binding


class EvalError(Exception):
    """Ill-formed input detected while evaluating (unknown function, bad arity, ...)."""


TermFn = Callable[[dict], object]
PredFn = Callable[[dict], bool]

BUILTIN_ARITY = {
    "+": 2, "-": 2, "++": 2, "(+)": 2, "cup": 2, "cap": 2, "#": 1, "ran": 1, "dom": 1,
    "dsub": 2, "apply": 2, "count": 2,
}


def split_conj(p) -> list:
    if isinstance(p, And):
        return split_conj(p.lhs) + split_conj(p.rhs)
    if isinstance(p, PTrue):
        return []
    return [p]


def defining_eq(conj, var: str):
    """Term t when conj is ``var = t`` (either side) and var is not free in t."""
    if isinstance(conj, Rel) and conj.op == "=":
        for a, b in ((conj.lhs, conj.rhs), (conj.rhs, conj.lhs)):
            if isinstance(a, Var) and a.name == var and var not in free_vars(b):
                return b
    return None


class Evaluator:
    def __init__(self, dom: DomainConfig, types: dict[str, TypeExpr] | None = None):
        self.dom = dom
        self.types = dict(dom.vars)
        if types:
            self.types.update(types)
        self.nat_limit, self.list_limit = dom.limits(self.types.values())
        self._cache: dict[int, tuple] = {}
        self._derived: dict[str, TermFn] = {}

    # ----- helpers -----

    def binder_type(self, var: str, ty: Optional[TypeExpr]) -> TypeExpr:
        if ty is not None:
            return ty
        if var in self.types:
            return self.types[var]
        raise EvalError(f"no type known for bound variable {var}")

    def eval_term(self, t, env: dict):
        return self.term(t)(env)

    def eval_pred(self, p, env: dict) -> bool:
        return self.pred(p)(env)

    def _cached(self, node, build):
        hit = self._cache.get(id(node))
        if hit is not None and hit[0] is node:
            return hit[1]
        fn = build(node)
        self._cache[id(node)] = (node, fn)
        return fn

    # ----- terms -----

    def term(self, t) -> TermFn:
        return self._cached(t, self._term)

    def _nat(self, n: int) -> int:
        if n < 0 or (self.nat_limit and n >= self.nat_limit):
            raise OutOfDomain(f"{n} outside the natural-number range")
        return n

    def _list(self, xs) -> LVal:
        if self.list_limit and len(xs) > self.list_limit:
            raise OutOfDomain("list longer than any declared list type")
        return LVal(xs)

    def _term(self, t) -> TermFn:
        match t:
            case Var(name):
                if name in self.dom.consts:
                    c = self.dom.consts[name]
                    return lambda e: e.get(name, c)

                def var(e, name=name):
                    try:
                        return e[name]
                    except KeyError:
                        raise EvalError(f"unbound variable {name}") from None
                return var
            case Lit(v):
                return lambda e: v
            case Nil():
                empty = LVal(())
                return lambda e: empty
            case Cons(h, tl):
                fh, ft = self.term(h), self.term(tl)

                def cons(e):
                    rest = ft(e)
                    if type(rest) is not LVal:
                        raise OutOfDomain("list tail is not a list")
                    return self._list((fh(e),) + rest)
                return cons
            case Tup(items):
                fs = [self.term(i) for i in items]
                return lambda e: tuple(f(e) for f in fs)
            case SetLit(items):
                fs = [self.term(i) for i in items]
                return lambda e: frozenset(f(e) for f in fs)
            case MapLit(pairs):
                fs = [(self.term(k), self.term(v)) for k, v in pairs]
                return lambda e: frozenset((fk(e), fv(e)) for fk, fv in fs)
            case Comp(pat, src, body):
                return self._comp(pat, src, body)
            case App(fn, args):
                return self._app(fn, args)
        if hasattr(t, "compile_term"):
            return t.compile_term(self)
        raise EvalError(f"cannot evaluate {t!r}")

    def _comp(self, pat, src, body) -> TermFn:
        fb = self.term(body)
        names = (pat,) if isinstance(pat, str) else tuple(pat)
        if isinstance(src, TypeExpr):
            if not isinstance(pat, str):
                raise EvalError("type comprehension needs a single variable")
            values = self.dom.carrier(src)
            fsrc = lambda e: values
        else:
            inner = self.term(src)

            def fsrc(e):
                s = inner(e)
                if type(s) not in (frozenset, LVal):
                    raise OutOfDomain("comprehension source is not a set")
                return s

        def comp(e):
            saved = [e.get(n, _MISSING) for n in names]
            out = set()
            try:
                for item in fsrc(e):
                    if isinstance(pat, str):
                        e[pat] = item
                    else:
                        if type(item) is not tuple or len(item) != len(names):
                            continue
                        for n, x in zip(names, item):
                            e[n] = x
                    out.add(fb(e))
            finally:
                for n, s in zip(names, saved):
                    if s is _MISSING:
                        e.pop(n, None)
                    else:
                        e[n] = s
            return frozenset(out)
        return comp

    def _app(self, fn: str, args) -> TermFn:
        fs = [self.term(a) for a in args]
        if fn in BUILTIN_ARITY:
            if len(args) != BUILTIN_ARITY[fn]:
                raise EvalError(f"{fn} expects {BUILTIN_ARITY[fn]} arguments")
            return _BUILTINS[fn](self, *fs)
        if fn in self.dom.tables:
            tb = self.dom.tables[fn]
            if len(fs) != 1:
                raise EvalError(f"table {fn} takes one argument")
            graph, f0 = tb.graph, fs[0]

            def table(e):
                k = f0(e)
                try:
                    return graph[k]
                except (KeyError, TypeError):
                    raise OutOfDomain(f"{fn} undefined at {k!r}") from None
            return table
        if fn in self.dom.derived:
            d = self.dom.derived[fn]
            if len(fs) != len(d.params):
                raise EvalError(f"{fn} expects {len(d.params)} arguments")
            if fn not in self._derived:
                self._derived[fn] = None  # guards against self-reference while compiling
                self._derived[fn] = self.term(d.body)
            params = d.params

            def derived(e):
                body = self._derived[fn]
                if body is None:
                    raise EvalError(f"derived function {fn} is recursive")
                return body({**{k: v for k, v in zip(params, (f(e) for f in fs))}})
            return derived
        raise EvalError(f"unknown function {fn}")

    # ----- predicates -----

    def pred(self, p) -> PredFn:
        return self._cached(p, self._pred)

    def _pred(self, p) -> PredFn:
        match p:
            case PTrue():
                return lambda e: True
            case PFalse():
                return lambda e: False
            case Rel(op, lhs, rhs):
                return self._rel(op, self.term(lhs), self.term(rhs))
            case Is(t, ty):
                ft = self.term(t)
                rty = self.dom.resolve(ty)
                from .config import _member

                def is_(e):
                    try:
                        return _member(ft(e), rty)
                    except OutOfDomain:
                        return False
                return is_
            case Not(b):
                fb = self.pred(b)
                return lambda e: not fb(e)
            case And(a, b):
                fa, fb = self.pred(a), self.pred(b)
                return lambda e: fa(e) and fb(e)
            case Or(a, b):
                fa, fb = self.pred(a), self.pred(b)
                return lambda e: fa(e) or fb(e)
            case Implies(a, b):
                fa, fb = self.pred(a), self.pred(b)
                return lambda e: (not fa(e)) or fb(e)
            case Iff(a, b):
                fa, fb = self.pred(a), self.pred(b)
                return lambda e: fa(e) == fb(e)
            case PExists(v, ty, body):
                return self._quant(v, self.binder_type(v, ty), body, exists=True)
            case PForall(v, ty, body):
                return self._quant(v, self.binder_type(v, ty), body, exists=False)
        if hasattr(p, "compile_pred"):
            return p.compile_pred(self)
        raise EvalError(f"cannot evaluate {p!r}")

    def _rel(self, op: str, fl: TermFn, fr: TermFn) -> PredFn:
        def rel(e):
            try:
                a, b = fl(e), fr(e)
            except OutOfDomain:
                return False
            if op == "=":
                return a == b
            if op == "!=":
                return a != b
            if op == "in":
                return _contains(b, a)
            if op == "notin":
                return not _contains(b, a)
            if op == "subset":
                if type(a) is not frozenset or type(b) is not frozenset:
                    raise EvalError(f"subset needs two sets, got {a!r} and {b!r}")
                return a <= b
            if type(a) is not type(b) or type(a) not in (int, frozenset):
                raise EvalError(f"cannot compare {a!r} {op} {b!r}")
            return a < b if op == "<" else a <= b
        return rel

    def _quant(self, v: str, ty: TypeExpr, body, exists: bool) -> PredFn:
        from .config import _member
        cls = PExists if exists else PForall
        block = [(v, ty)]
        inner = body
        while isinstance(inner, cls) and inner.var not in {n for n, _ in block}:
            block.append((inner.var, self.binder_type(inner.var, inner.type)))
            inner = inner.body
        names = [n for n, _ in block]
        if exists:
            conjs = split_conj(inner)
        else:
            conjs = split_conj(inner.lhs) if isinstance(inner, Implies) else []
        # an equation known = pattern fixes the pattern's variables, so only
        # the rest of the block is enumerated
        found = None
        for c in conjs:
            if not (isinstance(c, Rel) and c.op == "="):
                continue
            for pat, known in ((c.lhs, c.rhs), (c.rhs, c.lhs)):
                if free_vars(known) & set(names):
                    continue
                m = _Matcher(self, set(names))
                fm = m.compile(pat)
                if fm is not None and m.bound:
                    found = (self.term(known), fm, m.bound)
                    break
            if found:
                break
        if found is None:
            return self._enum_quant(v, ty, body, exists)
        fknown, fmatch, matched = found
        rtypes = {n: self.dom.resolve(t) for n, t in block}
        rest = [n for n in names if n not in matched]
        carriers = [self.dom.carrier(t) for n, t in block if n not in matched]
        checks = [(n, rtypes[n]) for n in names if n in matched]
        finner = self.pred(inner)

        def quant(e):
            saved = [e.get(n, _MISSING) for n in names]
            try:
                for combo in itertools.product(*carriers):
                    for n, x in zip(rest, combo):
                        e[n] = x
                    try:
                        hit = fmatch(e, fknown(e))
                    except OutOfDomain:
                        hit = False
                    if hit and all(_member(e[n], t) for n, t in checks):
                        if finner(e) == exists:
                            return exists
                return not exists
            finally:
                for n, s in zip(names, saved):
                    if s is _MISSING:
                        e.pop(n, None)
                    else:
                        e[n] = s
        return quant

    def _enum_quant(self, v: str, ty: TypeExpr, body, exists: bool) -> PredFn:
        values = self.dom.carrier(ty)
        fbody = self.pred(body)

        def quant(e):
            old = e.get(v, _MISSING)
            try:
                for x in values:
                    e[v] = x
                    if fbody(e) == exists:
                        return exists
                return not exists
            finally:
                if old is _MISSING:
                    e.pop(v, None)
                else:
                    e[v] = old
        return quant


class _Matcher:
    """Compiles a term into a function solving ``value = term`` for some variables.

    Only injective constructors are inverted (cons, tuples, and concatenation
    with one side already known), so a match, when it exists, is unique.
    """

    def __init__(self, ev: Evaluator, targets: set[str]):
        self.ev = ev
        self.targets = targets
        self.bound: list[str] = []

    def compile(self, t):
        if not (free_vars(t) & self.targets):
            ft = self.ev.term(t)

            def equal(e, x):
                try:
                    return ft(e) == x
                except OutOfDomain:
                    return False
            return equal
        match t:
            case Var(name):
                if name in self.bound:
                    return lambda e, x: e[name] == x
                self.bound.append(name)

                def bind(e, x):
                    e[name] = x
                    return True
                return bind
            case Cons(h, tl):
                fh = self.compile(h)
                ft = fh and self.compile(tl)
                if ft is None:
                    return None

                def cons(e, x):
                    return type(x) is LVal and len(x) > 0 and fh(e, x[0]) and ft(e, LVal(x[1:]))
                return cons
            case Tup(items):
                fs = []
                for i in items:
                    f = self.compile(i)
                    if f is None:
                        return None
                    fs.append(f)

                def tup(e, x):
                    return (type(x) is tuple and len(x) == len(fs)
                            and all(f(e, y) for f, y in zip(fs, x)))
                return tup
            case App("++", (a, b)):
                if not (free_vars(a) & self.targets):
                    fa, fb = self.ev.term(a), self.compile(b)
                    if fb is None:
                        return None

                    def prefix(e, x):
                        p = fa(e)
                        return (type(x) is LVal and type(p) is LVal and x[:len(p)] == p
                                and fb(e, LVal(x[len(p):])))
                    return prefix
                if not (free_vars(b) & self.targets):
                    fb, fa = self.ev.term(b), self.compile(a)
                    if fa is None:
                        return None

                    def suffix(e, x):
                        q = fb(e)
                        n = len(x) - len(q) if type(x) is LVal and type(q) is LVal else -1
                        return n >= 0 and x[n:] == q and fa(e, LVal(x[:n]))
                    return suffix
        return None


def _contains(coll, x) -> bool:
    if type(coll) in (frozenset, LVal):
        return x in coll
    raise OutOfDomain(f"membership in a non-collection {coll!r}")


# ----- built-in operators -----

def _op_plus(ev, fa, fb):
    def plus(e):
        a, b = fa(e), fb(e)
        if type(a) is not int or type(b) is not int:
            raise OutOfDomain("'+' on non-numbers")
        return ev._nat(a + b)
    return plus


def _op_minus(ev, fa, fb):
    def minus(e):
        a, b = fa(e), fb(e)
        if type(a) is not int or type(b) is not int:
            raise OutOfDomain("'-' on non-numbers")
        return ev._nat(a - b)
    return minus


def _op_concat(ev, fa, fb):
    def concat(e):
        a, b = fa(e), fb(e)
        if type(a) is not LVal or type(b) is not LVal:
            raise OutOfDomain("'++' on non-lists")
        return ev._list(a + b)
    return concat


def _as_map(v) -> dict:
    if type(v) is not frozenset:
        raise OutOfDomain("expected a map")
    out = {}
    for p in v:
        if type(p) is not tuple or len(p) != 2:
            raise OutOfDomain("expected a set of pairs")
        out[p[0]] = p[1]
    return out


def _op_override(ev, fa, fb):
    def override(e):
        m = _as_map(fa(e))
        m.update(_as_map(fb(e)))
        return frozenset(m.items())
    return override


def _set_op(kind):
    def build(ev, fa, fb):
        def op(e):
            a, b = fa(e), fb(e)
            if type(a) is not frozenset or type(b) is not frozenset:
                raise OutOfDomain(f"'{kind}' on non-sets")
            return a | b if kind == "cup" else a & b
        return op
    return build


def _op_len(ev, fa):
    def length(e):
        a = fa(e)
        if type(a) not in (LVal, frozenset):
            raise OutOfDomain("'#' on a non-collection")
        return len(a)
    return length


def _op_ran(ev, fa):
    def ran(e):
        a = fa(e)
        if type(a) is LVal:
            return frozenset(a)
        return frozenset(_as_map(a).values())
    return ran


def _op_dom(ev, fa):
    def dom(e):
        a = fa(e)
        if type(a) is LVal:
            return frozenset(range(1, len(a) + 1))
        return frozenset(_as_map(a))
    return dom


def _op_dsub(ev, fd, ff):
    def dsub(e):
        d, f = fd(e), ff(e)
        if type(d) is not frozenset:
            raise OutOfDomain("domain subtraction needs a set")
        return frozenset(p for p in _as_map(f).items() if p[0] not in d)
    return dsub


def _op_apply(ev, ff, fk):
    def apply(e):
        f, k = ff(e), fk(e)
        if type(f) is LVal:
            if type(k) is int and 1 <= k <= len(f):
                return f[k - 1]
            raise OutOfDomain("list index out of range")
        m = _as_map(f)
        try:
            return m[k]
        except (KeyError, TypeError):
            raise OutOfDomain("map applied outside its domain") from None
    return apply


def _op_count(ev, fx, fl):
    def count(e):
        x, xs = fx(e), fl(e)
        if type(xs) is not LVal:
            raise OutOfDomain("count needs a list")
        return xs.count(x)
    return count


_BUILTINS = {
    "+": _op_plus, "-": _op_minus, "++": _op_concat, "(+)": _op_override,
    "cup": _set_op("cup"), "cap": _set_op("cap"), "#": _op_len, "ran": _op_ran,
    "dom": _op_dom, "dsub": _op_dsub, "apply": _op_apply, "count": _op_count,
}

__all__ = ["Evaluator", "OutOfDomain", "EvalError", "FuelExhausted", "split_conj", "defining_eq", "ConfigError"]

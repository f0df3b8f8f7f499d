"""Finite carriers, constants, function tables and derived functions."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

from ..syntax.ast import (
    AtomsT, BoolT, FunT, ListT, MapT, NamedT, NatT, OptT, SetT, Term, TupleT, TypeExpr,
)
from ..syntax.lexer import ParseError, tokenize
from ..syntax.parser import Parser
from .values import NULL, LVal, sort_key

DEFAULT_BUDGET = 5_000_000


class ConfigError(Exception):
    pass


class BudgetExceeded(Exception):
    def __init__(self, msg: str, checked: int = 0):
        super().__init__(msg)
        self.checked = checked


@dataclass
class Table:
    name: str
    dom: TypeExpr
    cod: TypeExpr
    graph: dict
    injective: bool = False


@dataclass
class Derived:
    name: str
    params: tuple[str, ...]
    body: Term


@dataclass
class DomainConfig:
    aliases: dict[str, TypeExpr] = field(default_factory=dict)
    scopes: dict[str, TypeExpr] = field(default_factory=dict)
    consts: dict[str, int] = field(default_factory=dict)
    tables: dict[str, Table] = field(default_factory=dict)
    derived: dict[str, Derived] = field(default_factory=dict)
    vars: dict[str, TypeExpr] = field(default_factory=dict)
    budget: int = DEFAULT_BUDGET
    _carriers: dict = field(default_factory=dict, repr=False)

    # ----- construction -----

    def copy(self) -> "DomainConfig":
        return DomainConfig(dict(self.aliases), dict(self.scopes), dict(self.consts),
                            dict(self.tables), dict(self.derived), dict(self.vars), self.budget)

    def add_alias(self, name: str, ty: TypeExpr) -> None:
        if name in self.aliases and self.resolve(self.aliases[name]) != self.resolve(ty):
            raise ConfigError(f"type {name} declared twice with different models")
        self.aliases[name] = ty

    # ----- types -----

    def resolve(self, t: TypeExpr, _seen: tuple = ()) -> TypeExpr:
        """Expand aliases and const bounds; the result mentions only ints."""
        match t:
            case NamedT(name):
                if name in _seen:
                    raise ConfigError(f"cyclic type alias {name}")
                if name not in self.aliases:
                    raise ConfigError(f"unknown type {name}")
                return self.resolve(self.aliases[name], _seen + (name,))
            case NatT(b):
                return NatT(self.const_int(b))
            case BoolT() | AtomsT():
                return t
            case ListT(e, n):
                return ListT(self.resolve(e, _seen), self.const_int(n))
            case SetT(e):
                return SetT(self.resolve(e, _seen))
            case OptT(e):
                return OptT(self.resolve(e, _seen))
            case MapT(k, v):
                return MapT(self.resolve(k, _seen), self.resolve(v, _seen))
            case FunT(k, v):
                return FunT(self.resolve(k, _seen), self.resolve(v, _seen))
            case TupleT(items):
                return TupleT(tuple(self.resolve(i, _seen) for i in items))
        raise ConfigError(f"not a type: {t!r}")

    def const_int(self, b) -> int:
        if isinstance(b, int):
            return b
        if b not in self.consts:
            raise ConfigError(f"unknown constant {b}")
        return self.consts[b]

    def scope_type(self, t: TypeExpr) -> TypeExpr:
        """The type used when enumerating a free variable declared with t."""
        seen = set()
        while isinstance(t, NamedT) and t.name not in seen:
            seen.add(t.name)
            if t.name in self.scopes:
                return self.resolve(self.scopes[t.name])
            t = self.aliases.get(t.name, t)
        return self.resolve(t)

    def cardinality(self, t: TypeExpr) -> int:
        t = self.resolve(t)
        return _card(t)

    def carrier(self, t: TypeExpr) -> list:
        t = self.resolve(t)
        hit = self._carriers.get(t)
        if hit is None:
            n = _card(t)
            if n > self.budget:
                raise BudgetExceeded(f"carrier of {t} has {n} values, over the budget {self.budget}")
            hit = _enumerate(t)
            self._carriers[t] = hit
        return hit

    def scope(self, t: TypeExpr) -> list:
        return self.carrier(self.scope_type(t))

    def member(self, v, t: TypeExpr) -> bool:
        return _member(v, self.resolve(t))

    def limits(self, extra: Iterable[TypeExpr] = ()) -> tuple[int, int]:
        """Largest nat bound and list length mentioned anywhere."""
        nat, lst = 0, 0
        types = list(self.aliases.values()) + list(self.scopes.values()) + list(self.vars.values())
        types += [x for tb in self.tables.values() for x in (tb.dom, tb.cod)] + list(extra)
        for t in types:
            try:
                r = self.resolve(t)
            except ConfigError:
                continue
            for sub in _walk(r):
                if isinstance(sub, NatT):
                    nat = max(nat, sub.bound)
                elif isinstance(sub, ListT):
                    lst = max(lst, sub.maxlen)
        nat = max([nat] + list(self.consts.values()))
        return nat, lst

    def validate(self) -> None:
        for name, t in self.aliases.items():
            self.resolve(t)
        for name, s in self.scopes.items():
            if name not in self.aliases:
                raise ConfigError(f"scope for undeclared type {name}")
            for v in self.carrier(s):
                if not self.member(v, self.aliases[name]):
                    raise ConfigError(f"scope of {name} is not contained in its carrier")
        for tb in self.tables.values():
            keys = self.carrier(tb.dom)
            if set(tb.graph) != set(keys):
                raise ConfigError(f"function table {tb.name} is not total on its domain")
            for v in tb.graph.values():
                if not self.member(v, tb.cod):
                    raise ConfigError(f"function table {tb.name} leaves its codomain")
            if tb.injective and len(set(tb.graph.values())) != len(tb.graph):
                raise ConfigError(f"function table {tb.name} is declared injective but is not")

    def describe_sizes(self, env: dict[str, TypeExpr]) -> dict[str, int]:
        return {v: self.cardinality(self.scope_type(t)) for v, t in sorted(env.items())}


def _walk(t: TypeExpr):
    yield t
    match t:
        case ListT(e, _) | SetT(e) | OptT(e):
            yield from _walk(e)
        case MapT(k, v) | FunT(k, v):
            yield from _walk(k)
            yield from _walk(v)
        case TupleT(items):
            for i in items:
                yield from _walk(i)


def _card(t: TypeExpr) -> int:
    match t:
        case NatT(b):
            return b
        case BoolT():
            return 2
        case AtomsT(names):
            return len(names)
        case OptT(e):
            return _card(e) + 1
        case ListT(e, n):
            k = _card(e)
            return sum(k ** i for i in range(n + 1))
        case SetT(e):
            return 2 ** _card(e)
        case MapT(k, v):
            return (_card(v) + 1) ** _card(k)
        case FunT(k, v):
            return _card(v) ** _card(k)
        case TupleT(items):
            return math.prod(_card(i) for i in items)
    raise ConfigError(f"cannot size {t!r}")


def _enumerate(t: TypeExpr) -> list:
    match t:
        case NatT(b):
            return list(range(b))
        case BoolT():
            return [False, True]
        case AtomsT(names):
            return list(names)
        case OptT(e):
            return _enumerate(e) + [NULL]
        case ListT(e, n):
            elems = _enumerate(e)
            return [LVal(p) for i in range(n + 1) for p in itertools.product(elems, repeat=i)]
        case SetT(e):
            elems = _enumerate(e)
            return [frozenset(c) for i in range(len(elems) + 1) for c in itertools.combinations(elems, i)]
        case MapT(k, v):
            keys, vals = _enumerate(k), _enumerate(v)
            out = []
            for choice in itertools.product([None] + [(x,) for x in vals], repeat=len(keys)):
                out.append(frozenset((key, c[0]) for key, c in zip(keys, choice) if c is not None))
            return out
        case FunT(k, v):
            keys, vals = _enumerate(k), _enumerate(v)
            return [frozenset(zip(keys, c)) for c in itertools.product(vals, repeat=len(keys))]
        case TupleT(items):
            return [tuple(p) for p in itertools.product(*(_enumerate(i) for i in items))]
    raise ConfigError(f"cannot enumerate {t!r}")


def _member(v, t: TypeExpr) -> bool:
    match t:
        case NatT(b):
            return type(v) is int and 0 <= v < b
        case BoolT():
            return type(v) is bool
        case AtomsT(names):
            return type(v) is str and v in names
        case OptT(e):
            return v == NULL if type(v) is str and v == NULL else _member(v, e)
        case ListT(e, n):
            return type(v) is LVal and len(v) <= n and all(_member(x, e) for x in v)
        case SetT(e):
            return type(v) is frozenset and all(_member(x, e) for x in v)
        case MapT(k, val) | FunT(k, val):
            if type(v) is not frozenset:
                return False
            keys = set()
            for p in v:
                if type(p) is not tuple or len(p) != 2 or not _member(p[0], k) or not _member(p[1], val):
                    return False
                if p[0] in keys:
                    return False
                keys.add(p[0])
            if isinstance(t, FunT):
                return len(keys) == _card(k)
            return True
        case TupleT(items):
            return (type(v) is tuple and len(v) == len(items)
                    and all(_member(x, i) for x, i in zip(v, items)))
    return False


# ----- .rcdom reader -----

def parse_domain(text: str, base: Optional[DomainConfig] = None) -> DomainConfig:
    from .evaluate import Evaluator, OutOfDomain

    cfg = base.copy() if base else DomainConfig()
    p = Parser(tokenize(text))
    pending_tables = []
    while p.tok.kind != "eof":
        kw = p.ident()
        if kw in ("type", "scope"):
            name = p.ident()
            p.expect("=")
            ty = p.type_expr()
            if kw == "type":
                cfg.add_alias(name, ty)
            else:
                cfg.scopes[name] = ty
        elif kw == "const":
            name = p.ident()
            p.expect("=")
            cfg.consts[name] = p.number()
        elif kw == "var":
            p.i -= 1
            for n, t in p.var_decl():
                cfg.vars[n] = t
        elif kw == "fn":
            name = p.ident()
            p.expect(":")
            dom = p.type_expr()
            p.expect("->")
            cod = p.type_expr()
            inj = False
            if p.at("injective"):
                p.advance()
                inj = True
            p.expect("=")
            p.expect("{")
            entries = []
            while not p.at("}"):
                k = p.term()
                p.expect(":")
                entries.append((k, p.term()))
                if not p.at("}"):
                    p.expect(",")
            p.advance()
            pending_tables.append((name, dom, cod, inj, entries))
        elif kw == "def":
            name = p.ident()
            p.expect("(")
            params = []
            while not p.at(")"):
                params.append(p.ident())
                if not p.at(")"):
                    p.expect(",")
            p.advance()
            p.expect("=")
            cfg.derived[name] = Derived(name, tuple(params), p.term())
        elif kw == "budget":
            cfg.budget = p.number()
        else:
            raise ParseError(f"unknown declaration {kw!r}", p.tok.line, p.tok.col)
    ev = Evaluator(cfg)
    for name, dom, cod, inj, entries in pending_tables:
        graph = {}
        for k, v in entries:
            try:
                graph[ev.eval_term(k, {})] = ev.eval_term(v, {})
            except OutOfDomain as e:
                raise ConfigError(f"table {name}: entry out of domain ({e})")
        cfg.tables[name] = Table(name, dom, cod, graph, inj)
    cfg.validate()
    return cfg


def sorted_values(vals) -> list:
    return sorted(vals, key=sort_key)

"""Ground values: ints, atoms (str), bools, lists, tuples and frozensets.

Lists are ``LVal`` (a tuple subclass) so they print as lists; tuples are
plain tuples; sets and maps are frozensets, a map being a set of pairs.
"""
from __future__ import annotations

from ..syntax.ast import Cons, Lit, Nil, SetLit, Term, Tup

NULL = "null"


class LVal(tuple):
    __slots__ = ()

    def __repr__(self) -> str:
        return "[" + ", ".join(map(repr, self)) + "]"


def sort_key(v):
    if isinstance(v, bool):
        return (0, int(v))
    if isinstance(v, int):
        return (1, v)
    if isinstance(v, str):
        return (2, v)
    if isinstance(v, LVal):
        return (3, len(v), tuple(sort_key(x) for x in v))
    if isinstance(v, tuple):
        return (4, len(v), tuple(sort_key(x) for x in v))
    if isinstance(v, frozenset):
        return (5, len(v), tuple(sorted(sort_key(x) for x in v)))
    raise TypeError(f"not a value: {v!r}")


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, str)):
        return str(v)
    if isinstance(v, LVal):
        return "[" + ", ".join(format_value(x) for x in v) + "]"
    if isinstance(v, tuple):
        return "(" + ", ".join(format_value(x) for x in v) + ")"
    if isinstance(v, frozenset):
        return "{" + ", ".join(format_value(x) for x in sorted(v, key=sort_key)) + "}"
    raise TypeError(f"not a value: {v!r}")


def value_to_term(v) -> Term:
    if isinstance(v, (bool, int, str)):
        return Lit(v)
    if isinstance(v, LVal):
        t: Term = Nil()
        for x in reversed(v):
            t = Cons(value_to_term(x), t)
        return t
    if isinstance(v, tuple):
        return Tup(tuple(value_to_term(x) for x in v))
    if isinstance(v, frozenset):
        return SetLit(tuple(value_to_term(x) for x in sorted(v, key=sort_key)))
    raise TypeError(f"not a value: {v!r}")


def format_binding(b: dict) -> str:
    return ", ".join(f"{k}={format_value(v)}" for k, v in b.items())

"""Addressing subcommands by child-index paths."""
from __future__ import annotations

from typing import Iterator, Sequence

from .ast import BINARY_COMMANDS, CExists, CForall, Command, GenDemon

Path = tuple[int, ...]


class PathError(IndexError):
    pass


def children(c: Command) -> list[Command]:
    if isinstance(c, BINARY_COMMANDS):
        return [c.lhs, c.rhs]
    if isinstance(c, (CExists, CForall, GenDemon)):
        return [c.body]
    return []


def with_child(c: Command, i: int, sub: Command) -> Command:
    if isinstance(c, BINARY_COMMANDS):
        lhs, rhs = (sub, c.rhs) if i == 0 else (c.lhs, sub)
        return type(c)(lhs, rhs, span=c.span)
    if isinstance(c, (CExists, CForall)):
        return type(c)(c.var, c.type, sub, span=c.span)
    if isinstance(c, GenDemon):
        return GenDemon(c.var, c.type, c.guard, sub, span=c.span)
    raise PathError(f"{type(c).__name__} has no children")


def focus(c: Command, path: Sequence[int]) -> Command:
    for depth, i in enumerate(path):
        kids = children(c)
        if not 0 <= i < len(kids):
            raise PathError(f"path {list(path)} out of range at depth {depth}")
        c = kids[i]
    return c


def replace(c: Command, path: Sequence[int], sub: Command) -> Command:
    if not path:
        return sub
    kids = children(c)
    i = path[0]
    if not 0 <= i < len(kids):
        raise PathError(f"path {list(path)} out of range")
    return with_child(c, i, replace(kids[i], path[1:], sub))


def all_paths(c: Command, prefix: Path = ()) -> Iterator[Path]:
    yield prefix
    for i, k in enumerate(children(c)):
        yield from all_paths(k, prefix + (i,))

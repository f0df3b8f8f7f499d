"""Seeded random commands over a small domain (X, Y : nat<5>, B : nat<4>; 100 bindings)."""
from __future__ import annotations

import random

from refcalc.domain import parse_domain
from refcalc.syntax.ast import (
    And, Assume, CExists, CForall, Disj, Implies, Lit, NamedT, Not, Or, Par, PTrue, Rel, Seq,
    Spec, Var,
)

DOMAIN_TEXT = """\
type n5 = nat<5>
type n4 = nat<4>
var X, Y : n5
var B : n4
"""

VARS = ("X", "Y", "B")


def small_domain():
    return parse_domain(DOMAIN_TEXT)


def _term(r: random.Random):
    if r.random() < 0.6:
        return Var(r.choice(VARS))
    return Lit(r.randrange(5))


def rand_pred(r: random.Random, depth: int = 2):
    if depth == 0 or r.random() < 0.4:
        roll = r.random()
        if roll < 0.05:
            return PTrue()
        return Rel(r.choice(["=", "!=", "<", "<="]), _term(r), _term(r))
    kind = r.randrange(4)
    a = rand_pred(r, depth - 1)
    if kind == 3:
        return Not(a)
    b = rand_pred(r, depth - 1)
    return (And, Or, Implies)[kind](a, b)


def rand_command(r: random.Random, depth: int = 5):
    """A demonic-free, call-free command of nesting depth at most ``depth``."""
    if depth == 0 or r.random() < 0.25:
        return (Spec if r.random() < 0.6 else Assume)(rand_pred(r))
    kind = r.randrange(5)
    if kind == 4:
        v = r.choice(VARS)
        ty = NamedT("n4" if v == "B" else "n5")
        return (CExists if r.random() < 0.7 else CForall)(v, ty, rand_command(r, depth - 1))
    cls = (Seq, Disj, Par, Seq)[kind]
    return cls(rand_command(r, depth - 1), rand_command(r, depth - 1))


def rand_pfun_program(r: random.Random, n_ops: int = 3):
    """A PFun client in opaque form plus the answers a Python dict gives for X.

    The program threads one map through init, a few updates and removes, and
    ends with ``access(k, F_n, X)``.
    """
    keys, table, ops = ("a", "b"), {}, []
    for _ in range(n_ops):
        k = r.choice(keys)
        if r.random() < 0.75:
            v = r.randrange(3)
            ops.append(f"update({k}, {v}, F{len(ops)}, F{len(ops) + 1})")
            table[k] = v
        else:
            ops.append(f"remove({k}, F{len(ops)}, F{len(ops) + 1})")
            table.pop(k, None)
    k = r.choice(keys)
    text = f"access({k}, F{len(ops)}, X)"
    for i in reversed(range(len(ops))):
        text = f"ex F{i + 1}:pfun.({ops[i]}, {text})"
    text = f"ex F0:pfun.(init(F0), {text})"
    answers = [] if k not in table else [table[k]]
    return text, answers

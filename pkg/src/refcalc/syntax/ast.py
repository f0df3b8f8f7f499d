"""Abstract syntax for types, terms, predicates, commands and the file formats.

All nodes are frozen dataclasses. Source spans are carried but ignored by
equality, so structurally identical trees compare equal wherever they came
from.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

Span = Optional[tuple[int, int]]


@dataclass(frozen=True)
class Node:
    span: Span = field(default=None, compare=False, repr=False, kw_only=True)


# ---------- types ----------

class TypeExpr(Node):
    pass


@dataclass(frozen=True)
class NatT(TypeExpr):
    bound: Union[int, str]          # values 0..bound-1; a str names a const


@dataclass(frozen=True)
class BoolT(TypeExpr):
    pass


@dataclass(frozen=True)
class AtomsT(TypeExpr):
    names: tuple[str, ...]


@dataclass(frozen=True)
class ListT(TypeExpr):
    elem: TypeExpr
    maxlen: Union[int, str]


@dataclass(frozen=True)
class SetT(TypeExpr):
    elem: TypeExpr


@dataclass(frozen=True)
class MapT(TypeExpr):
    """Partial function, modelled as a set of key/value pairs."""
    key: TypeExpr
    val: TypeExpr


@dataclass(frozen=True)
class FunT(TypeExpr):
    """Total function on the key carrier."""
    key: TypeExpr
    val: TypeExpr


@dataclass(frozen=True)
class TupleT(TypeExpr):
    items: tuple[TypeExpr, ...]


@dataclass(frozen=True)
class OptT(TypeExpr):
    """The element type extended with the atom ``null``."""
    elem: TypeExpr


@dataclass(frozen=True)
class NamedT(TypeExpr):
    name: str


# ---------- terms ----------

class Term(Node):
    pass


@dataclass(frozen=True)
class Var(Term):
    name: str


@dataclass(frozen=True)
class Lit(Term):
    value: Union[int, str, bool]


@dataclass(frozen=True)
class Tup(Term):
    items: tuple[Term, ...]


@dataclass(frozen=True)
class Nil(Term):
    pass


@dataclass(frozen=True)
class Cons(Term):
    head: Term
    tail: Term


@dataclass(frozen=True)
class SetLit(Term):
    items: tuple[Term, ...]


@dataclass(frozen=True)
class MapLit(Term):
    pairs: tuple[tuple[Term, Term], ...]


@dataclass(frozen=True)
class App(Term):
    """Built-in operator, declared table or derived function applied to args."""
    fn: str
    args: tuple[Term, ...]


@dataclass(frozen=True)
class Comp(Term):
    """Set comprehension ``{X : T . body}`` or ``{(K,V) in S . body}``.

    ``pattern`` is a variable name or a tuple of names; ``src`` is either a
    TypeExpr (range over the carrier) or a Term (range over a set value).
    """
    pattern: Union[str, tuple[str, ...]]
    src: Union[TypeExpr, Term]
    body: Term


# ---------- predicates ----------

class Pred(Node):
    pass


@dataclass(frozen=True)
class PTrue(Pred):
    pass


@dataclass(frozen=True)
class PFalse(Pred):
    pass


REL_OPS = ("=", "!=", "<", "<=", "in", "notin", "subset")


@dataclass(frozen=True)
class Rel(Pred):
    op: str
    lhs: Term
    rhs: Term


@dataclass(frozen=True)
class Is(Pred):
    """Type membership ``t in T``."""
    term: Term
    type: TypeExpr


@dataclass(frozen=True)
class Not(Pred):
    body: Pred


@dataclass(frozen=True)
class And(Pred):
    lhs: Pred
    rhs: Pred


@dataclass(frozen=True)
class Or(Pred):
    lhs: Pred
    rhs: Pred


@dataclass(frozen=True)
class Implies(Pred):
    lhs: Pred
    rhs: Pred


@dataclass(frozen=True)
class Iff(Pred):
    lhs: Pred
    rhs: Pred


@dataclass(frozen=True)
class PExists(Pred):
    var: str
    type: Optional[TypeExpr]
    body: Pred


@dataclass(frozen=True)
class PForall(Pred):
    var: str
    type: Optional[TypeExpr]
    body: Pred


# ---------- commands ----------

class Command(Node):
    pass


@dataclass(frozen=True)
class Spec(Command):
    pred: Pred


@dataclass(frozen=True)
class Assume(Command):
    pred: Pred


@dataclass(frozen=True)
class Disj(Command):
    lhs: Command
    rhs: Command


@dataclass(frozen=True)
class Par(Command):
    lhs: Command
    rhs: Command


@dataclass(frozen=True)
class Seq(Command):
    lhs: Command
    rhs: Command


@dataclass(frozen=True)
class CExists(Command):
    var: str
    type: Optional[TypeExpr]
    body: Command


@dataclass(frozen=True)
class CForall(Command):
    var: str
    type: Optional[TypeExpr]
    body: Command


@dataclass(frozen=True)
class Call(Command):
    name: str
    args: tuple[Term, ...]


@dataclass(frozen=True)
class Demon(Command):
    lhs: Command
    rhs: Command


@dataclass(frozen=True)
class GenDemon(Command):
    var: str
    type: Optional[TypeExpr]
    guard: Pred
    body: Command


@dataclass(frozen=True)
class Magic(Command):
    pass


DEMONIC = (Demon, GenDemon, Magic)
BINARY_COMMANDS = (Disj, Par, Seq, Demon)
BINARY_PREDS = (And, Or, Implies, Iff)


def fail() -> Spec:
    return Spec(PFalse())


def abort() -> Assume:
    return Assume(PFalse())


def is_demonic(c: Command) -> bool:
    if isinstance(c, DEMONIC):
        return True
    if isinstance(c, BINARY_COMMANDS):
        return is_demonic(c.lhs) or is_demonic(c.rhs)
    if isinstance(c, (CExists, CForall)):
        return is_demonic(c.body)
    return False


# ---------- declarations ----------

MODES = ("reg", "in", "out")


@dataclass(frozen=True)
class Param(Node):
    name: str
    type: TypeExpr
    mode: str = "reg"


@dataclass(frozen=True)
class ProcedureDef(Node):
    name: str
    params: tuple[Param, ...]
    body: Command

    @property
    def formals(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params)

    def by_mode(self, mode: str) -> tuple[Param, ...]:
        return tuple(p for p in self.params if p.mode == mode)

    @property
    def recursive(self) -> bool:
        return self.name in called_names(self.body)

    @property
    def assumption(self) -> Pred:
        """A of the ``{A},[P]`` shape (true for a bare spec)."""
        return split_shape(self.body)[0]

    @property
    def spec(self) -> Pred:
        return split_shape(self.body)[1]

    @property
    def kind(self) -> str:
        ins, outs = self.by_mode("in"), self.by_mode("out")
        if not ins and outs:
            return "init"
        if ins and not outs:
            return "observer"
        if ins and outs:
            return "constructor"
        return "plain"


class ShapeError(ValueError):
    pass


def split_shape(body: Command) -> tuple[Pred, Pred]:
    if isinstance(body, Spec):
        return PTrue(), body.pred
    if isinstance(body, Seq) and isinstance(body.lhs, Assume) and isinstance(body.rhs, Spec):
        return body.lhs.pred, body.rhs.pred
    raise ShapeError("procedure body is not of the form {A},[P]")


def called_names(c: Command) -> set[str]:
    if isinstance(c, Call):
        return {c.name}
    if isinstance(c, BINARY_COMMANDS):
        return called_names(c.lhs) | called_names(c.rhs)
    if isinstance(c, (CExists, CForall, GenDemon)):
        return called_names(c.body)
    return set()


@dataclass(frozen=True)
class ModuleDecl(Node):
    name: str
    opaque: str
    opaque_type: Optional[TypeExpr]
    procs: tuple[ProcedureDef, ...]

    def proc(self, name: str) -> ProcedureDef:
        for p in self.procs:
            if p.name == name or f"{self.name}.{p.name}" == name:
                return p
        raise KeyError(name)

    def has_proc(self, name: str) -> bool:
        try:
            self.proc(name)
            return True
        except KeyError:
            return False


@dataclass(frozen=True)
class Lemma(Node):
    params: tuple[tuple[str, TypeExpr], ...]
    pred: Pred


@dataclass(frozen=True)
class Coupling(Node):
    abs_module: str
    abs_type: str
    abs_var: str
    conc_module: str
    conc_type: str
    conc_var: str
    pred: Pred
    lemmas: tuple[Lemma, ...] = ()


@dataclass(frozen=True)
class ApplyLaw(Node):
    law: str
    path: tuple[int, ...]
    args: tuple[tuple[str, object], ...]   # raw token slices until the law schema is known
    expect: Command


@dataclass(frozen=True)
class SemanticStep(Node):
    expect: Command


@dataclass(frozen=True)
class Derivation(Node):
    start: Command
    steps: tuple[Union[ApplyLaw, SemanticStep], ...]
    context: Optional[Pred] = None
    procs: tuple[ProcedureDef, ...] = ()
    vars: tuple[tuple[str, TypeExpr], ...] = ()


@dataclass(frozen=True)
class Program(Node):
    """A ``.rc`` file: procedure definitions, variable typings and one command."""
    command: Command
    procs: tuple[ProcedureDef, ...] = ()
    vars: tuple[tuple[str, TypeExpr], ...] = ()

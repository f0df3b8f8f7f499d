"""Recursive-descent parser for the ASCII surface syntax.

Binary operators of one kind associate to the right. Chaining two different
binary operators without parentheses is rejected with AmbiguousMixError.
"""
from __future__ import annotations

from typing import Callable, Optional

from .ast import (
    And, App, ApplyLaw, Assume, AtomsT, BoolT, CExists, CForall, Call, Command, Comp, Cons,
    Coupling, Demon, Derivation, Disj, FunT, GenDemon, Iff, Implies, Is, Lemma, ListT, Lit,
    Magic, MapLit, MapT, ModuleDecl, NamedT, NatT, Nil, Not, OptT, Or, Par, Param, PExists,
    PFalse, PForall, Pred, ProcedureDef, Program, PTrue, Rel, SemanticStep, Seq, SetLit, SetT,
    Spec, Term, Tup, TupleT, TypeExpr, Var,
)
from .lexer import AmbiguousMixError, ParseError, Token, tokenize

KEYWORDS = {
    "ex", "all", "dch", "magic", "fail", "abort", "true", "false",
    "in", "notin", "subset", "cup", "cap",
}
TYPE_HEADS = {"nat", "list", "set", "map", "fun", "tuple", "opt", "atoms"}

TERM_OPS = ("+", "-", "++", "(+)", "cup", "cap")
PRED_OPS = {"/\\": And, "\\/": Or, "=>": Implies, "<=>": Iff}
CMD_OPS = {",": Seq, "\\/": Disj, "/\\": Par, "|~|": Demon}
REL_TOKENS = ("=", "!=", "<", "<=", "in", "notin", "subset")

# after a parenthesised predicate, any of these means it was really a term
_TERM_CONTINUE = set(REL_TOKENS) | set(TERM_OPS) | {"("}


def _is_var_name(name: str) -> bool:
    return name[0].isupper()


def _build_right(items: list, ops: list[Token], table: dict, what: str):
    if not ops:
        return items[0]
    kinds = {t.text for t in ops}
    if len(kinds) > 1:
        t = ops[1]
        raise AmbiguousMixError(
            f"mixed {what} operators {sorted(kinds)} need explicit parentheses", t.line, t.col)
    node = items[-1]
    for left, op in zip(reversed(items[:-1]), reversed(ops)):
        node = table[op.text](left, node, span=left.span)
    return node


class Parser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.i = 0

    # ----- token helpers -----

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, *texts: str) -> bool:
        t = self.tok
        return t.kind in ("sym", "ident") and t.text in texts

    def error(self, msg: str, tok: Optional[Token] = None) -> ParseError:
        t = tok or self.tok
        shown = t.text or "end of input"
        return ParseError(f"{msg} (at {shown!r})", t.line, t.col)

    def advance(self) -> Token:
        t = self.tok
        if t.kind != "eof":
            self.i += 1
        return t

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise self.error(f"expected {text!r}")
        return self.advance()

    def ident(self) -> str:
        t = self.tok
        if t.kind != "ident":
            raise self.error("expected identifier")
        self.advance()
        return t.text

    def number(self) -> int:
        t = self.tok
        if t.kind != "num":
            raise self.error("expected number")
        self.advance()
        return int(t.text)

    def sp(self) -> tuple[int, int]:
        return (self.tok.line, self.tok.col)

    def end(self) -> None:
        if self.tok.kind != "eof":
            raise self.error("unexpected trailing input")

    # ----- types -----

    def type_expr(self) -> TypeExpr:
        sp = self.sp()
        name = self.ident()
        if name == "bool":
            return BoolT(span=sp)
        if name == "atoms" and self.at("{"):
            self.advance()
            names = []
            while not self.at("}"):
                names.append(self.ident())
                if not self.at("}"):
                    self.expect(",")
            self.advance()
            return AtomsT(tuple(names), span=sp)
        if name in TYPE_HEADS and self.at("<"):
            self.advance()
            if name == "nat":
                bound = self.number() if self.tok.kind == "num" else self.ident()
                self.expect(">")
                return NatT(bound, span=sp)
            if name == "list":
                elem = self.type_expr()
                self.expect(",")
                n = self.number() if self.tok.kind == "num" else self.ident()
                self.expect(">")
                return ListT(elem, n, span=sp)
            if name in ("set", "opt"):
                elem = self.type_expr()
                self.expect(">")
                return (SetT if name == "set" else OptT)(elem, span=sp)
            if name in ("map", "fun"):
                k = self.type_expr()
                self.expect(",")
                v = self.type_expr()
                self.expect(">")
                return (MapT if name == "map" else FunT)(k, v, span=sp)
            items = [self.type_expr()]
            while self.at(","):
                self.advance()
                items.append(self.type_expr())
            self.expect(">")
            return TupleT(tuple(items), span=sp)
        if name in KEYWORDS:
            raise self.error("expected a type")
        return NamedT(name, span=sp)

    def looks_like_type(self) -> bool:
        t, nxt = self.tok, self.peek()
        if t.kind != "ident" or t.text in KEYWORDS or _is_var_name(t.text):
            return False
        if t.text in TYPE_HEADS and nxt.text in ("<", "{"):
            return True
        return nxt.text != "("

    # ----- terms -----

    def term(self) -> Term:
        items = [self.term_unary()]
        ops: list[Token] = []
        while self.at(*TERM_OPS):
            ops.append(self.advance())
            items.append(self.term_unary())
        minus = [t for t in ops if t.text == "-"]
        if len(minus) > 1 and len(ops) == len(minus):
            raise AmbiguousMixError("chained '-' needs explicit parentheses", minus[1].line, minus[1].col)
        table = {op: (lambda a, b, op=op, span=None: App(op, (a, b), span=span)) for op in TERM_OPS}
        return _build_right(items, ops, table, "term")

    def term_unary(self) -> Term:
        if self.at("#"):
            sp = self.sp()
            self.advance()
            return App("#", (self.term_unary(),), span=sp)
        return self.postfix(self.primary())

    def postfix(self, t: Term) -> Term:
        while self.at("(") and isinstance(t, (Var, App, Comp, SetLit, MapLit)):
            self.advance()
            arg = self.term()
            self.expect(")")
            t = App("apply", (t, arg), span=t.span)
        return t

    def args(self) -> tuple[Term, ...]:
        self.expect("(")
        out = []
        while not self.at(")"):
            out.append(self.term())
            if not self.at(")"):
                self.expect(",")
        self.advance()
        return tuple(out)

    def primary(self) -> Term:
        t = self.tok
        sp = (t.line, t.col)
        if t.kind == "num":
            self.advance()
            return Lit(int(t.text), span=sp)
        if t.kind == "ident":
            if t.text in KEYWORDS:
                raise self.error("expected a term")
            self.advance()
            if _is_var_name(t.text):
                return Var(t.text, span=sp)
            if self.at("("):
                return App(t.text, self.args(), span=sp)
            return Lit(t.text, span=sp)
        if self.at("["):
            return self.list_term()
        if self.at("{"):
            return self.brace_term()
        if self.at("("):
            self.advance()
            first = self.term()
            if self.at(","):
                items = [first]
                while self.at(","):
                    self.advance()
                    items.append(self.term())
                self.expect(")")
                return Tup(tuple(items), span=sp)
            self.expect(")")
            return first
        raise self.error("expected a term")

    def list_term(self) -> Term:
        sp = self.sp()
        self.expect("[")
        items: list[Term] = []
        tail: Term = Nil(span=sp)
        if not self.at("]"):
            items.append(self.term())
            while self.at(","):
                self.advance()
                items.append(self.term())
            if self.at("|"):
                self.advance()
                tail = self.term()
        self.expect("]")
        for h in reversed(items):
            tail = Cons(h, tail, span=h.span)
        return tail

    def pattern(self):
        if self.tok.kind == "ident" and _is_var_name(self.tok.text):
            return self.ident()
        self.expect("(")
        names = [self.ident()]
        while self.at(","):
            self.advance()
            names.append(self.ident())
        self.expect(")")
        if not all(_is_var_name(n) for n in names):
            raise self.error("pattern names must be variables")
        return tuple(names)

    def brace_term(self) -> Term:
        sp = self.sp()
        self.expect("{")
        if self.at("}"):
            self.advance()
            return SetLit((), span=sp)
        save = self.i
        try:
            pat = self.pattern()
            if self.at(":", "in"):
                kind = self.advance().text
                src = self.type_expr() if kind == ":" else self.term()
                self.expect(".")
                body = self.term()
                self.expect("}")
                return Comp(pat, src, body, span=sp)
        except ParseError:
            pass
        self.i = save
        first = self.term()
        if self.at("|->"):
            self.advance()
            pairs = [(first, self.term())]
            while self.at(","):
                self.advance()
                k = self.term()
                self.expect("|->")
                pairs.append((k, self.term()))
            self.expect("}")
            return MapLit(tuple(pairs), span=sp)
        items = [first]
        while self.at(","):
            self.advance()
            items.append(self.term())
        self.expect("}")
        return SetLit(tuple(items), span=sp)

    # ----- predicates -----

    def pred(self) -> Pred:
        items = [self.pred_unary()]
        ops: list[Token] = []
        while self.at(*PRED_OPS):
            ops.append(self.advance())
            items.append(self.pred_unary())
        return _build_right(items, ops, PRED_OPS, "predicate")

    def binders(self) -> list[tuple[str, Optional[TypeExpr]]]:
        out: list[tuple[str, Optional[TypeExpr]]] = []
        while True:
            group = [self.ident()]
            while self.at(","):
                self.advance()
                group.append(self.ident())
            ty = None
            if self.at(":"):
                self.advance()
                ty = self.type_expr()
            out.extend((n, ty) for n in group)
            if not self.at(","):
                break
            self.advance()
        for n, _ in out:
            if not _is_var_name(n):
                raise self.error(f"bound name {n!r} must start with an upper-case letter")
        return out

    def pred_unary(self) -> Pred:
        sp = self.sp()
        if self.at("~"):
            self.advance()
            return Not(self.pred_unary(), span=sp)
        if self.at("true"):
            self.advance()
            return PTrue(span=sp)
        if self.at("false"):
            self.advance()
            return PFalse(span=sp)
        if self.at("ex", "all"):
            q = PExists if self.advance().text == "ex" else PForall
            bs = self.binders()
            self.expect(".")
            self.expect("(")
            body = self.pred()
            self.expect(")")
            for name, ty in reversed(bs):
                body = q(name, ty, body, span=sp)
            return body
        if self.at("("):
            save = self.i
            try:
                self.advance()
                p = self.pred()
                self.expect(")")
                if not self.at(*_TERM_CONTINUE):
                    return p
            except ParseError:
                pass
            self.i = save
        return self.atom()

    def atom(self) -> Pred:
        sp = self.sp()
        lhs = self.term()
        if not self.at(*REL_TOKENS):
            raise self.error("expected a relation (=, !=, <, <=, in, notin, subset)")
        op = self.advance().text
        if op in ("in", "notin") and self.looks_like_type():
            p = Is(lhs, self.type_expr(), span=sp)
            return Not(p, span=sp) if op == "notin" else p
        return Rel(op, lhs, self.term(), span=sp)

    # ----- commands -----

    def command(self) -> Command:
        items = [self.cmd_unary()]
        ops: list[Token] = []
        while self.at(*CMD_OPS):
            ops.append(self.advance())
            items.append(self.cmd_unary())
        return _build_right(items, ops, CMD_OPS, "command")

    def cmd_unary(self) -> Command:
        t = self.tok
        sp = (t.line, t.col)
        if self.at("["):
            self.advance()
            p = self.pred()
            self.expect("]")
            return Spec(p, span=sp)
        if self.at("{"):
            self.advance()
            p = self.pred()
            self.expect("}")
            return Assume(p, span=sp)
        if self.at("("):
            self.advance()
            c = self.command()
            self.expect(")")
            return c
        if self.at("ex", "all"):
            q = CExists if self.advance().text == "ex" else CForall
            bs = self.binders()
            self.expect(".")
            self.expect("(")
            body = self.command()
            self.expect(")")
            for name, ty in reversed(bs):
                body = q(name, ty, body, span=sp)
            return body
        if self.at("dch"):
            self.advance()
            name = self.ident()
            if not _is_var_name(name):
                raise self.error("choice variable must start with an upper-case letter")
            ty = None
            if self.at(":"):
                self.advance()
                ty = self.type_expr()
            self.expect(".")
            self.expect("(")
            guard = self.pred()
            self.expect("=>>")
            body = self.command()
            self.expect(")")
            return GenDemon(name, ty, guard, body, span=sp)
        if self.at("magic"):
            self.advance()
            return Magic(span=sp)
        if self.at("fail"):
            self.advance()
            return Spec(PFalse(span=sp), span=sp)
        if self.at("abort"):
            self.advance()
            return Assume(PFalse(span=sp), span=sp)
        if t.kind == "ident" and t.text not in KEYWORDS:
            name = self.ident()
            if self.at(".") and self.peek().kind == "ident":
                self.advance()
                name = f"{name}.{self.ident()}"
            if not self.at("("):
                raise self.error("expected '(' after procedure name")
            return Call(name, self.args(), span=sp)
        raise self.error("expected a command")

    # ----- declarations -----

    def params(self) -> tuple[Param, ...]:
        self.expect("(")
        out = []
        while not self.at(")"):
            sp = self.sp()
            mode = "reg"
            if self.at("in", "out") and self.peek().kind == "ident":
                mode = self.advance().text
            name = self.ident()
            self.expect(":")
            out.append(Param(name, self.type_expr(), mode, span=sp))
            if not self.at(")"):
                self.expect(",")
        self.advance()
        names = [p.name for p in out]
        if len(set(names)) != len(names):
            raise self.error("formal parameter names must be distinct")
        return tuple(out)

    def proc_def(self) -> ProcedureDef:
        sp = self.sp()
        self.expect("proc")
        name = self.ident()
        params = self.params()
        self.expect("=")
        return ProcedureDef(name, params, self.command(), span=sp)

    def var_decl(self) -> list[tuple[str, TypeExpr]]:
        self.expect("var")
        names = [self.ident()]
        while self.at(","):
            self.advance()
            names.append(self.ident())
        self.expect(":")
        ty = self.type_expr()
        return [(n, ty) for n in names]

    def raw_until(self, stops: set[str]) -> tuple[Token, ...]:
        depth, out = 0, []
        while self.tok.kind != "eof":
            if depth == 0 and self.tok.text in stops:
                break
            if self.tok.text in ("(", "[", "{"):
                depth += 1
            elif self.tok.text in (")", "]", "}"):
                depth -= 1
            out.append(self.advance())
        return tuple(out)


def _run(text: str, rule: Callable[[Parser], object]):
    p = Parser(tokenize(text))
    node = rule(p)
    p.end()
    return node


def parse_command(text: str) -> Command:
    return _run(text, Parser.command)


def parse_pred(text: str) -> Pred:
    return _run(text, Parser.pred)


def parse_term(text: str) -> Term:
    return _run(text, Parser.term)


def parse_type(text: str) -> TypeExpr:
    return _run(text, Parser.type_expr)


def parse_tokens(tokens: tuple[Token, ...], rule: Callable[[Parser], object]):
    """Parse a raw token slice saved by the derivation-script reader."""
    if not tokens:
        raise ParseError("empty argument")
    last = tokens[-1]
    p = Parser(list(tokens) + [Token("eof", "", last.line, last.col + len(last.text), last.pos)])
    node = rule(p)
    p.end()
    return node


def parse_program(text: str) -> Program:
    p = Parser(tokenize(text))
    procs, vars_, cmd = [], [], None
    while p.tok.kind != "eof":
        if p.at("proc"):
            procs.append(p.proc_def())
        elif p.at("var") and p.peek().kind == "ident":
            vars_.extend(p.var_decl())
        elif cmd is None:
            cmd = p.command()
        else:
            raise p.error("a program holds a single command")
    if cmd is None:
        raise ParseError("program has no command")
    return Program(cmd, tuple(procs), tuple(vars_))


def parse_module(text: str) -> ModuleDecl:
    p = Parser(tokenize(text))
    sp = p.sp()
    p.expect("module")
    name = p.ident()
    p.expect("opaque")
    opaque = p.ident()
    model = None
    if p.at("="):
        p.advance()
        model = p.type_expr()
    procs = []
    while p.at("proc"):
        procs.append(p.proc_def())
    p.expect("end")
    p.end()
    return ModuleDecl(name, opaque, model, tuple(procs), span=sp)


def _qualified(p: Parser) -> tuple[str, str]:
    mod = p.ident()
    p.expect(".")
    return mod, p.ident()


def parse_coupling(text: str) -> Coupling:
    p = Parser(tokenize(text))
    sp = p.sp()
    p.expect("couple")
    amod, aty = _qualified(p)
    p.expect("as")
    avar = p.ident()
    p.expect("with")
    cmod, cty = _qualified(p)
    p.expect("as")
    cvar = p.ident()
    p.expect(":")
    pred = p.pred()
    lemmas = []
    while p.at("lemma"):
        lsp = p.sp()
        p.advance()
        p.expect("(")
        params = []
        while not p.at(")"):
            n = p.ident()
            p.expect(":")
            params.append((n, p.type_expr()))
            if not p.at(")"):
                p.expect(",")
        p.advance()
        p.expect(":")
        lemmas.append(Lemma(tuple(params), p.pred(), span=lsp))
    p.end()
    return Coupling(amod, aty, avar, cmod, cty, cvar, pred, tuple(lemmas), span=sp)


def parse_path(p: Parser) -> tuple[int, ...]:
    p.expect("[")
    out = []
    while not p.at("]"):
        out.append(p.number())
        if not p.at("]"):
            p.expect(",")
    p.advance()
    return tuple(out)


def parse_derivation(text: str) -> Derivation:
    p = Parser(tokenize(text))
    procs, vars_ = [], []
    while p.at("proc", "var"):
        if p.at("proc"):
            procs.append(p.proc_def())
        else:
            vars_.extend(p.var_decl())
    sp = p.sp()
    p.expect("derive")
    context = None
    if p.at("context"):
        p.advance()
        p.expect(":")
        context = p.pred()
    p.expect("start")
    p.expect(":")
    start = p.command()
    steps = []
    while p.at("step"):
        ssp = p.sp()
        p.advance()
        if p.at("semantic"):
            p.advance()
            p.expect("expect")
            p.expect(":")
            steps.append(SemanticStep(p.command(), span=ssp))
            continue
        p.expect("apply")
        law = p.ident()
        p.expect("at")
        path = parse_path(p)
        args = []
        if p.at("with"):
            p.advance()
            while True:
                key = p.ident()
                p.expect(":=")
                args.append((key, p.raw_until({";", "expect"})))
                if not p.at(";"):
                    break
                p.advance()
        p.expect("expect")
        p.expect(":")
        steps.append(ApplyLaw(law, path, tuple(args), p.command(), span=ssp))
    p.expect("end")
    p.end()
    return Derivation(start, tuple(steps), context, tuple(procs), tuple(vars_), span=sp)

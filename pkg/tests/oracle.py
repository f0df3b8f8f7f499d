"""Brute-force reference interpreter used to cross-check the library.

Commands are run directly on a binding: quantifiers loop over carriers and a
call is replaced by its body with the actuals substituted for the formals, so
nothing here goes through the ok/ef predicate construction or the planned
entailment search.
"""
from __future__ import annotations

import itertools

from refcalc.domain import Evaluator
from refcalc.domain.values import value_to_term
from refcalc.syntax import ordered_free_vars, subst_many
from refcalc.syntax.ast import (
    And, Assume, CExists, CForall, Call, Demon, Disj, GenDemon, Magic, Par, Seq, Spec,
)


class Fuel(Exception):
    pass


class Oracle:
    def __init__(self, dom, env, procs=(), fuel=6):
        self.dom = dom
        self.env = dict(env)
        self.procs = {p.name: p for p in procs}
        for p in self.procs.values():
            for q in p.params:
                self.env.setdefault(q.name, q.type)
        self.fuel = fuel
        self.ev = Evaluator(dom, self.env)
        self._preds = {}
        self._bodies = {}
        self._memo = {}
        self._fvs = {}

    def holds(self, p, b):
        f = self._preds.get(id(p))
        if f is None:
            f = self._preds[id(p)] = (p, self.ev.pred(p))
        return f[1](dict(b))

    def _key(self, kind, c, b, fuel):
        fv = self._fvs.get(id(c))
        if fv is None:
            fv = self._fvs[id(c)] = (c, tuple(ordered_free_vars(c)))
        return kind, id(c), fuel, tuple(b.get(v) for v in fv[1])

    def ok(self, c, b, fuel=None):
        fuel = self.fuel if fuel is None else fuel
        key = self._key("ok", c, b, fuel)
        if key not in self._memo:
            self._memo[key] = self._ok(c, b, fuel)
        return self._memo[key]

    def ef(self, c, b, fuel=None):
        fuel = self.fuel if fuel is None else fuel
        key = self._key("ef", c, b, fuel)
        if key not in self._memo:
            self._memo[key] = self._ef(c, b, fuel)
        return self._memo[key]

    def _ok(self, c, b, fuel):
        match c:
            case Spec():
                return True
            case Assume(a):
                return self.holds(a, b)
            case Disj(s, t) | Par(s, t):
                return self.ok(s, b, fuel) and self.ok(t, b, fuel)
            case Seq(s, t):
                return self.ok(s, b, fuel) and (not self.ef(s, b, fuel) or self.ok(t, b, fuel))
            case CExists(v, ty, body) | CForall(v, ty, body):
                return all(self.ok(body, {**b, v: x}, fuel) for x in self.dom.carrier(ty))
            case Call():
                return self.ok(self._unfold(c, fuel), b, fuel - 1)
        raise TypeError(f"oracle cannot run {c!r}")

    def _ef(self, c, b, fuel):
        match c:
            case Spec(p):
                return self.holds(p, b)
            case Assume():
                return True
            case Disj(s, t):
                return self.ef(s, b, fuel) or self.ef(t, b, fuel)
            case Par(s, t) | Seq(s, t):
                return self.ef(s, b, fuel) and self.ef(t, b, fuel)
            case CExists(v, ty, body):
                return any(self.ef(body, {**b, v: x}, fuel) for x in self.dom.carrier(ty))
            case CForall(v, ty, body):
                return all(self.ef(body, {**b, v: x}, fuel) for x in self.dom.carrier(ty))
            case Call():
                return self.ef(self._unfold(c, fuel), b, fuel - 1)
        raise TypeError(f"oracle cannot run {c!r}")

    def _unfold(self, c, fuel):
        if fuel <= 0:
            raise Fuel(c.name)
        hit = self._bodies.get(id(c))
        if hit is None:
            proc = self.procs[c.name]
            body = subst_many(proc.body, dict(zip(proc.formals, c.args)))
            hit = self._bodies[id(c)] = (c, body)
        return hit[1]

    def bindings(self, *nodes, fixed=None):
        fixed = fixed or {}
        names = []
        for n in nodes:
            for v in ordered_free_vars(n):
                if v not in names and v not in self.dom.consts:
                    names.append(v)
        carriers = [[fixed[v]] if v in fixed else self.dom.carrier(self.dom.scope_type(self.env[v]))
                    for v in names]
        for vals in itertools.product(*carriers):
            yield dict(zip(names, vals))

    def refines(self, s, t, context=None, fixed=None):
        """None when s is refined by t, else the first failing binding."""
        nodes = (s, t) if context is None else (s, t, context)
        for b in self.bindings(*nodes, fixed=fixed):
            if context is not None and not self.holds(context, b):
                continue
            if not self.ok(s, b):
                continue
            if not self.ok(t, b) or self.ef(s, b) != self.ef(t, b):
                return b
        return None

    # demonic choice: a binary choice is a list of branches, magic has none,
    # and a guarded choice is a value picked per valuation of the guard's other
    # variables

    def branches(self, c):
        match c:
            case Demon(a, b):
                return self.branches(a) + self.branches(b)
            case Magic():
                return []
            case Seq(a, b) | Disj(a, b) | Par(a, b):
                return [type(c)(x, y) for x in self.branches(a) for y in self.branches(b)]
            case CExists(v, ty, body) | CForall(v, ty, body):
                return [type(c)(v, ty, x) for x in self.branches(body)]
        return [c]

    def _choice_type(self, g):
        return g.type if g.type is not None else self.env[g.var]

    def refines_demonic(self, d, t, context=None):
        """None when some resolution of d is refined by t, else a failing binding."""
        last = {}
        for br in self.branches(d):
            g = _first_choice(br)
            if g is None:
                cex = self.refines(br, t, context)
                if cex is None:
                    return None
                last = cex
                continue
            others = [v for v in ordered_free_vars(g.guard) if v != g.var]
            carrier = self.dom.carrier(self._choice_type(g))
            failed = None
            for vals in itertools.product(*(self.dom.carrier(self.dom.scope_type(self.env[v]))
                                            for v in others)):
                fixed = dict(zip(others, vals))
                if not any(self.refines(_resolve(br, g, u), t, context, fixed) is None
                           for u in carrier if self.holds(g.guard, {**fixed, g.var: u})):
                    failed = fixed
                    break
            if failed is None:
                return None
            last = failed
        return last

    def refined_by_demonic(self, s, d, context=None):
        """None when s is refined by every resolution of d, else a failing binding."""
        for br in self.branches(d):
            g = _first_choice(br)
            if g is None:
                cex = self.refines(s, br, context)
                if cex is not None:
                    return cex
                continue
            others = [v for v in ordered_free_vars(g.guard) if v != g.var]
            valuations = [dict(zip(others, vals)) for vals in itertools.product(
                *(self.dom.carrier(self.dom.scope_type(self.env[v])) for v in others))]
            for u in self.dom.carrier(self._choice_type(g)):
                if not any(self.holds(g.guard, {**e, g.var: u}) for e in valuations):
                    continue
                guard = subst_many(g.guard, {g.var: value_to_term(u)})
                ctx = guard if context is None else And(context, guard)
                cex = self.refines(s, _resolve(br, g, u), ctx)
                if cex is not None:
                    return {**cex, g.var: u}
        return None

    def entails(self, hyp, goal):
        for b in self.bindings(hyp, goal):
            if self.holds(hyp, b) and not self.holds(goal, b):
                return b
        return None


def _first_choice(c):
    match c:
        case GenDemon():
            return c
        case Seq(a, b) | Disj(a, b) | Par(a, b):
            return _first_choice(a) or _first_choice(b)
        case CExists(body=body) | CForall(body=body):
            return _first_choice(body)
    return None


def _resolve(c, g, u):
    """c with the choice g replaced by its body at value u."""
    if c is g:
        return subst_many(g.body, {g.var: value_to_term(u)})
    match c:
        case Seq(a, b) | Disj(a, b) | Par(a, b):
            return type(c)(_resolve(a, g, u), _resolve(b, g, u))
        case CExists(v, ty, body) | CForall(v, ty, body):
            return type(c)(v, ty, _resolve(body, g, u))
    return c


def brute_entails(dom, env, hyp, goal):
    """hyp |= goal by evaluating both at every binding; None or a failing binding."""
    return Oracle(dom, env).entails(hyp, goal)


def law_discrepancies(script, dom):
    """Replay a derivation and brute-force check each law step's pre and post.

    Returns the derivation report, the number of law steps checked and a
    list of (step index, law, failing binding).
    """
    from refcalc.laws import check_derivation
    from refcalc.syntax.ast import is_demonic

    rep = check_derivation(script, dom)
    oracle = Oracle(dom, {**dom.vars, **dict(script.vars)}, script.procs)
    bad, n = [], 0
    for step in rep.steps:
        if step.kind != "law" or not step.passed:
            continue
        n += 1
        pre, post = step.before, step.after
        if is_demonic(pre) and is_demonic(post):
            # each resolution of post must refine some resolution of pre
            cex = None
            for br in oracle.branches(post):
                if _first_choice(br) is not None:
                    raise NotImplementedError("guarded choice on both sides")
                cex = cex or oracle.refines_demonic(pre, br, script.context)
        elif is_demonic(post):
            cex = oracle.refined_by_demonic(pre, post, script.context)
        elif is_demonic(pre):
            cex = oracle.refines_demonic(pre, post, script.context)
        else:
            cex = oracle.refines(pre, post, script.context)
        if cex is not None:
            bad.append((step.index, step.law, cex))
    return rep, n, bad

"""Deciding entailment by enumerating bindings.

The search order is fixed by a greedy plan: a variable pinned down by an
equation in the hypotheses is computed rather than enumerated. Otherwise the
next variable is one no equation defines, with the smallest carrier (ties
broken by first occurrence). Hypotheses are checked as soon as their variables are bound,
which prunes the enumeration. The counterexample reported is the first
failing binding in this order, so it does not depend on the worker count.
"""
from __future__ import annotations

import math
import multiprocessing
import time
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

from ..syntax.ast import Implies, Pred, PTrue, And, TypeExpr
from ..syntax.subst import free_vars, ordered_free_vars
from .config import BudgetExceeded, DomainConfig, _member
from .evaluate import EvalError, Evaluator, FuelExhausted, OutOfDomain, defining_eq, split_conj

PARALLEL_THRESHOLD = 20_000


@dataclass
class EntailResult:
    holds: bool
    counterexample: Optional[dict] = None
    failed_goal: Optional[int] = None
    checked: int = 0
    wall_ms: float = 0.0


def flatten_goal(goal: Pred) -> list[tuple[list[Pred], Pred]]:
    """Split a goal into (extra hypotheses, atomic goal) pairs."""
    out: list[tuple[list[Pred], Pred]] = []

    def go(extra, g):
        if isinstance(g, And):
            go(extra, g.lhs)
            go(extra, g.rhs)
        elif isinstance(g, Implies):
            go(extra + split_conj(g.lhs), g.rhs)
        elif not isinstance(g, PTrue):
            out.append((extra, g))
    go([], goal)
    return out


@dataclass
class _Step:
    var: str
    values: Optional[list]          # None for a computed (one-point) step
    point: object = None            # compiled defining term
    rtype: Optional[TypeExpr] = None
    checks: list = field(default_factory=list)


class Plan:
    def __init__(self, ev: Evaluator, env: dict[str, TypeExpr], variables: Sequence[str],
                 hyps: Sequence[Pred], order_hint: Sequence[str]):
        self.ev = ev
        dom = ev.dom
        rank = {v: i for i, v in enumerate(order_hint)}
        hyp_vars = [free_vars(h) & set(variables) for h in hyps]
        in_hyp = set().union(*hyp_vars) if hyp_vars else set()
        assigned: set[str] = set()
        steps: list[_Step] = []
        remaining = set(variables)
        self.closed_checks = [ev.pred(h) for h, vs in zip(hyps, hyp_vars) if not vs]
        done = [not vs for vs in hyp_vars]
        # variables some equation could compute are best left until last
        definable = {v for h in hyps for conj in split_conj(h) for v in free_vars(conj) & set(variables)
                     if defining_eq(conj, v) is not None}
        while remaining:
            chosen, point = None, None
            for h, vs in zip(hyps, hyp_vars):
                for conj in split_conj(h):
                    for v in sorted(remaining & free_vars(conj), key=lambda x: rank.get(x, 1 << 30)):
                        t = defining_eq(conj, v)
                        if t is not None and (free_vars(t) & set(variables)) <= assigned:
                            chosen, point = v, t
                            break
                    if chosen:
                        break
                if chosen:
                    break
            if chosen is None:
                chosen = min(remaining, key=lambda v: (v not in in_hyp, v in definable,
                                                      dom.cardinality(dom.scope_type(env[v])),
                                                      rank.get(v, 1 << 30), v))
            sty = dom.scope_type(env[chosen])
            if point is not None:
                step = _Step(chosen, None, ev.term(point), sty)
            else:
                step = _Step(chosen, dom.carrier(sty), None, sty)
            assigned.add(chosen)
            remaining.discard(chosen)
            for i, vs in enumerate(hyp_vars):
                if not done[i] and vs <= assigned:
                    done[i] = True
                    step.checks.append(ev.pred(hyps[i]))
            steps.append(step)
        self.steps = steps

    def estimate(self) -> int:
        return math.prod(len(s.values) for s in self.steps if s.values is not None)


class _Search:
    """Depth-first enumeration over a plan with a node budget."""

    def __init__(self, plan: Plan, leaf, budget: int, env0: Optional[dict] = None):
        self.plan = plan
        self.leaf = leaf            # compiled predicate, or None to collect solutions
        self.budget = budget
        self.count = 0
        self.env: dict = dict(env0 or {})

    def _tick(self):
        self.count += 1
        if self.count > self.budget:
            raise BudgetExceeded("enumeration budget exceeded", self.budget + 1)

    def first_failure(self, only_index: Optional[int] = None) -> Optional[dict]:
        try:
            if not all(c(self.env) for c in self.plan.closed_checks):
                return None
            for b in self._walk(0, only_index):
                if not self.leaf(self.env):
                    return dict(b)
        except FuelExhausted as e:
            e.binding = dict(self.env)
            raise
        return None

    def solutions(self) -> Iterator[dict]:
        if not all(c(self.env) for c in self.plan.closed_checks):
            return
        for b in self._walk(0, None):
            yield dict(b)

    def _walk(self, level: int, only_index: Optional[int]):
        steps = self.plan.steps
        if level == len(steps):
            yield self.env
            return
        step = steps[level]
        env = self.env
        if step.values is None:
            self._tick()
            try:
                x = step.point(env)
            except OutOfDomain:
                return
            if not _member(x, step.rtype):
                return
            candidates = (x,)
        elif only_index is not None and level == 0:
            candidates = (step.values[only_index],)
        else:
            candidates = step.values
        for x in candidates:
            if step.values is not None:
                self._tick()
            env[step.var] = x
            if all(c(env) for c in step.checks):
                yield from self._walk(level + 1, only_index)
        env.pop(step.var, None)


_PAR_STATE: dict = {}


def _par_worker(i: int):
    st = _PAR_STATE
    search = _Search(st["plan"], st["leaf"], st["budget"], st["env0"])
    try:
        fail = search.first_failure(only_index=i)
        return fail, search.count, None
    except BudgetExceeded:
        return None, search.count, "budget"
    except FuelExhausted as e:
        return e.binding, search.count, "fuel"


class Entailment:
    """Entailment checker bound to a domain and a typing of the free variables."""

    def __init__(self, dom: DomainConfig, env: dict[str, TypeExpr], *, budget: Optional[int] = None,
                 jobs: int = 1, evaluator: Optional[Evaluator] = None):
        self.dom = dom
        self.env = {**dom.vars, **env}
        self.budget = budget if budget is not None else dom.budget
        self.jobs = max(1, jobs)
        self.ev = evaluator or Evaluator(dom, self.env)
        self._plans: dict = {}

    def _variables(self, preds: Sequence[Pred]) -> list[str]:
        names: list[str] = []
        for p in preds:
            for v in ordered_free_vars(p):
                if v not in names:
                    names.append(v)
        out = []
        for v in names:
            if v in self.env:
                out.append(v)
            elif v not in self.dom.consts:
                raise EvalError(f"no type declared for free variable {v}")
        return out

    def check(self, hyp: Pred, goals: Sequence[Pred], fixed: Optional[dict] = None) -> EntailResult:
        """hyp entails every goal; reports the first goal (by index) that fails.

        Variables in ``fixed`` are held at the given values instead of enumerated.
        """
        fixed = fixed or {}
        start = time.perf_counter()
        hyps = split_conj(hyp)
        total = 0
        try:
            for gi, goal in enumerate(goals):
                for extra, g in flatten_goal(goal):
                    fail, n = self._one(hyps + extra, g, total, fixed)
                    total += n
                    if fail is not None:
                        return EntailResult(False, fail, gi, total, _ms(start))
        except BudgetExceeded as e:
            e.checked = self.budget + 1
            raise
        return EntailResult(True, None, None, total, _ms(start))

    def _one(self, hyps: list[Pred], goal: Pred, already: int,
             fixed: dict) -> tuple[Optional[dict], int]:
        order, sides, plan, leaf = self._prepare(hyps, goal, frozenset(fixed))
        budget = self.budget - already
        count = 0
        side: dict = {}
        for comp_plan in sides:
            search = _Search(comp_plan, None, budget - count, fixed)
            witness = next(search.solutions(), None)
            count += search.count
            if witness is None:
                return None, count
            side.update(witness)
        remaining = budget - count
        if (self.jobs > 1 and plan.steps and plan.steps[0].values is not None
                and len(plan.steps[0].values) > 1 and plan.estimate() >= PARALLEL_THRESHOLD):
            fail, n = self._parallel(plan, leaf, remaining, fixed)
        else:
            search = _Search(plan, leaf, remaining, fixed)
            fail = search.first_failure()
            n = search.count
        count += n
        if fail is None:
            return None, count
        full = {**side, **fail}
        return {v: full[v] for v in list(fixed) + order if v in full}, count

    def _prepare(self, hyps: list[Pred], goal: Pred, fixed: frozenset):
        """Plans for one atomic goal; cached because demonic checks repeat them."""
        key = (tuple(id(h) for h in hyps), id(goal), fixed)
        hit = self._plans.get(key)
        if hit is not None and hit[0][1] is goal and all(a is b for a, b in zip(hit[0][0], hyps)):
            return hit[1]
        order = [v for v in self._variables(hyps + [goal]) if v not in fixed]
        # connected components over shared variables
        parent = {v: v for v in order}

        def find(v):
            while parent[v] != v:
                parent[v] = parent[parent[v]]
                v = parent[v]
            return v

        groups = [free_vars(h) & set(order) for h in hyps] + [free_vars(goal) & set(order)]
        for vs in groups:
            vs = sorted(vs)
            for a, b in zip(vs, vs[1:]):
                parent[find(a)] = find(b)
        goal_roots = {find(v) for v in free_vars(goal) & set(order)}
        main_vars = [v for v in order if find(v) in goal_roots]
        main_hyps = [h for h, vs in zip(hyps, groups) if not vs or any(find(v) in goal_roots for v in vs)]
        sides = []
        seen_roots = set(goal_roots)
        for v in order:
            r = find(v)
            if r in seen_roots:
                continue
            seen_roots.add(r)
            comp_vars = [u for u in order if find(u) == r]
            comp_hyps = [h for h, vs in zip(hyps, groups) if vs and find(next(iter(vs))) == r]
            sides.append(Plan(self.ev, self.env, comp_vars, comp_hyps, order))
        plan = Plan(self.ev, self.env, main_vars, main_hyps, order)
        out = (order, sides, plan, self.ev.pred(goal))
        self._plans[key] = ((list(hyps), goal), out)
        return out

    def _parallel(self, plan: Plan, leaf, budget: int, fixed: dict) -> tuple[Optional[dict], int]:
        _PAR_STATE.clear()
        _PAR_STATE.update(plan=plan, leaf=leaf, budget=budget, env0=fixed)
        ctx = multiprocessing.get_context("fork")
        n = len(plan.steps[0].values)
        with ctx.Pool(min(self.jobs, n)) as pool:
            results = pool.map(_par_worker, range(n), chunksize=1)
        total = 0
        for fail, count, problem in results:
            total += count
            if total > budget or problem == "budget":
                raise BudgetExceeded("enumeration budget exceeded", budget + 1)
            if problem == "fuel":
                raise FuelExhausted(binding=fail)
            if fail is not None:
                return fail, total
        return None, total

    def solutions(self, pred: Pred, variables: Sequence[str]) -> list[dict]:
        """All bindings of the given variables satisfying pred, in plan order."""
        free = self._variables([pred])
        extra = [v for v in free if v not in variables]
        if extra:
            raise EvalError(f"solutions: unlisted free variables {extra}")
        plan = Plan(self.ev, self.env, list(variables), split_conj(pred), list(variables))
        search = _Search(plan, None, self.budget)
        return [{v: b[v] for v in variables} for b in search.solutions()]

    def satisfiable(self, pred: Pred) -> Optional[dict]:
        vs = self._variables([pred])
        plan = Plan(self.ev, self.env, vs, split_conj(pred), vs)
        return next(_Search(plan, None, self.budget).solutions(), None)


def entails(hyp: Pred, goal: Pred, env: dict[str, TypeExpr], dom: DomainConfig, *,
            budget: Optional[int] = None, jobs: int = 1) -> EntailResult:
    return Entailment(dom, env, budget=budget, jobs=jobs).check(hyp, [goal])


def _ms(start: float) -> float:
    return round((time.perf_counter() - start) * 1000, 3)

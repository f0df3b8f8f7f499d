"""Command-line front end.

Every subcommand prints a human-readable summary, or with ``--json`` a
versioned report. Exit status: 0 pass, 1 fail, 2 usage, parse or
configuration error.
"""
from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import sys
import time
from pathlib import Path
from typing import Optional

from .calc import calculate_module
from .domain import (
    BudgetExceeded, ConfigError, DomainConfig, EvalError, FuelExhausted, format_binding,
    format_value, parse_domain,
)
from .laws import LAWS, LawError, check_derivation
from .modules import (
    ModuleError, bind_module_types, check_module_refinement, check_opaque_form,
    naive_contextual_check, program_answers, refines_across, replace_calls,
)
from .semantics import DemonicError, Semantics
from .syntax import (
    ParseError, PathError, alpha_equal, parse_coupling, parse_derivation, parse_module,
    parse_pred, parse_program, pp_command, pp_coupling, pp_module, pp_pred, pp_program, pp_type,
)
from .syntax.ast import NamedT, ShapeError

SCHEMA = 1
FIXTURES = Path(__file__).parent / "fixtures"
EXIT = {"pass": 0, "fail": 1, "error": 2}
USER_ERRORS = (ParseError, ConfigError, EvalError, ModuleError, LawError, PathError, ShapeError,
               DemonicError, FuelExhausted, OSError)


class UsageError(Exception):
    pass


class Run:
    """Collects one invocation's inputs, obligations and statistics."""

    def __init__(self, command: str, args):
        self.command = command
        self.args = args
        self.inputs: list[dict] = []
        self.obligations: list[dict] = []
        self.details: dict = {}
        self.checked = 0
        self.dom: Optional[DomainConfig] = None
        self.lines: list[str] = []
        self.start = time.perf_counter()

    def read(self, name: str) -> str:
        path = locate(name)
        data = path.read_bytes()
        self.inputs.append({"file": name, "sha256": hashlib.sha256(data).hexdigest()})
        return data.decode("utf-8")

    def domain(self) -> DomainConfig:
        if self.dom is None:
            name = self.args.domain
            dom = parse_domain(self.read(name)) if name else DomainConfig()
            if self.args.budget is not None:
                dom.budget = self.args.budget
            self.dom = dom
        return self.dom

    def say(self, line: str = "") -> None:
        self.lines.append(line)

    def report(self, result: str, message: Optional[str] = None) -> dict:
        out = {"schema": SCHEMA, "command": self.command, "inputs": self.inputs, "result": result}
        if message:
            out["message"] = message
        out["obligations"] = self.obligations
        out.update(self.details)
        out["stats"] = {"bindings_checked": self.checked,
                        "wall_ms": round((time.perf_counter() - self.start) * 1000, 3),
                        "domain_sizes": domain_sizes(self.dom)}
        return out


def locate(name: str) -> Path:
    """The file itself, or a bundled fixture of the same name."""
    path = Path(name)
    if path.exists():
        return path
    bundled = FIXTURES / path.name
    if bundled.exists():
        return bundled
    raise FileNotFoundError(f"no such file: {name}")


def domain_sizes(dom: Optional[DomainConfig]) -> dict:
    if dom is None:
        return {}
    out = {}
    for name in sorted(dom.aliases):
        try:
            out[name] = dom.cardinality(dom.scope_type(NamedT(name)))
        except (ConfigError, EvalError):
            continue
    return out


def binding_json(b: Optional[dict]):
    if b is None:
        return None
    return {k: format_value(v) for k, v in b.items()}


# ----- subcommands -----

def cmd_parse(run: Run) -> str:
    name = run.args.file
    text = run.read(name)
    kind = run.args.kind or Path(name).suffix.lstrip(".")
    if kind == "rc":
        node = parse_program(text)
        out = pp_program(node)
        same = alpha_equal(parse_program(out).command, node.command)
    elif kind == "rcm":
        node = parse_module(text)
        out = pp_module(node)
        again = parse_module(out)
        same = all(alpha_equal(a.body, b.body) and a.params == b.params
                   for a, b in zip(node.procs, again.procs)) and len(node.procs) == len(again.procs)
    elif kind == "rcc":
        node = parse_coupling(text)
        out = pp_coupling(node)
        same = alpha_equal(parse_coupling(out).pred, node.pred)
    elif kind == "rcder":
        node = parse_derivation(text)
        out = (f"start: {pp_command(node.start)}\n"
               + "".join(f"step {i}: {getattr(s, 'law', 'semantic')}\n"
                         for i, s in enumerate(node.steps, 1))
               + f"result: {pp_command(node.steps[-1].expect) if node.steps else pp_command(node.start)}\n")
        same = True
    elif kind == "rcdom":
        dom = parse_domain(text)
        run.dom = dom
        out = "".join(f"type {n} = {pp_type(t)}\n" for n, t in dom.aliases.items())
        same = True
    else:
        raise UsageError(f"cannot tell what kind of file {name} is; use --kind")
    run.details["printed"] = out
    run.details["round_trip"] = same
    run.say(out.rstrip("\n"))
    return "pass" if same else "fail"


def cmd_semantics(run: Run) -> str:
    prog = parse_program(run.read(run.args.file))
    dom = run.domain()
    sem = Semantics(dom, prog.procs, dict(prog.vars), fuel=run.args.fuel, budget=run.args.budget)
    c = prog.command
    ok, ef = sem.ok(c), sem.ef(c)
    run.details["ok"] = pp_pred(ok)
    run.details["ef"] = pp_pred(ef)
    if run.args.symbolic:
        run.say(f"ok\t{pp_pred(ok)}")
        run.say(f"ef\t{pp_pred(ef)}")
        return "pass"
    variables = sem.variables(c)
    carriers = []
    for v in variables:
        if v not in sem.env:
            raise EvalError(f"no type declared for free variable {v}")
        carriers.append(dom.carrier(dom.scope_type(sem.env[v])))
    total = 1
    for vals in carriers:
        total *= len(vals)
    if total > sem.budget:
        raise BudgetExceeded(f"the table has {total} rows, over the budget {sem.budget}", total)
    okf, eff = sem.ev.pred(ok), sem.ev.pred(ef)
    rows = []
    run.say("\t".join(variables + ["ok", "ef"]))
    for vals in itertools.product(*carriers):
        env = dict(zip(variables, vals))
        o, e = okf(dict(env)), eff(dict(env))
        cells = [format_value(x) for x in vals] + [format_value(o), format_value(e)]
        rows.append(cells)
        run.say("\t".join(cells))
    run.checked = len(rows)
    run.details["table"] = {"columns": variables + ["ok", "ef"], "rows": rows}
    return "pass"


def cmd_refines(run: Run) -> str:
    s = parse_program(run.read(run.args.lhs))
    t = parse_program(run.read(run.args.rhs))
    dom = run.domain()
    env = {**dict(s.vars), **dict(t.vars)}
    ctx = parse_pred(run.args.context) if run.args.context else None
    names_s, names_t = {p.name: p for p in s.procs}, {p.name: p for p in t.procs}
    clash = any(names_t[n] != p for n, p in names_s.items() if n in names_t)
    if clash:
        if ctx is not None:
            raise UsageError("--context is not supported when the two sides define different "
                             "procedures of the same name")
        rep = refines_across(dom, s.command, s.procs, t.command, t.procs, env, fuel=run.args.fuel,
                             budget=run.args.budget, jobs=run.args.jobs)
    else:
        sem = Semantics(dom, {**names_s, **names_t}, env, fuel=run.args.fuel,
                        budget=run.args.budget, jobs=run.args.jobs)
        rep = sem.refines(s.command, t.command, ctx)
    run.checked = rep.checked
    goal = f"{pp_command(s.command)}  <=  {pp_command(t.command)}"
    if ctx is not None:
        goal = f"{pp_pred(ctx)} |> {goal}"
    run.obligations.append({"goal": goal, **rep.to_json()})
    run.say(f"{goal}\n{rep.describe()}")
    return "pass" if rep.holds else "fail"


def cmd_derivation(run: Run) -> str:
    script = parse_derivation(run.read(run.args.file))
    rep = check_derivation(script, run.domain(), fuel=run.args.fuel, budget=run.args.budget,
                           jobs=run.args.jobs)
    run.checked = rep.checked
    for step in rep.steps:
        for ob in step.obligations:
            run.obligations.append({"step": step.index, **ob.to_json()})
        if step.refinement is not None:
            run.obligations.append({"step": step.index, "goal": "semantic refinement",
                                    **step.refinement.to_json()})
    run.details["steps"] = [s.to_json() for s in rep.steps]
    run.details["derived"] = pp_command(rep.result)
    for step in rep.steps:
        where = f" at {list(step.path)}" if step.path is not None else ""
        run.say(f"step {step.index} {step.law or 'semantic'}{where}: "
                f"{'ok' if step.passed else 'FAILED'} ({step.message})")
        for ob in step.obligations:
            run.say(f"  {ob.text()}  [{ob.verdict or 'not checked'}]")
    run.say(("derivation checked: " if rep.passed else "derivation fails; reached: ")
            + pp_command(rep.result))
    return "pass" if rep.passed else "fail"


def cmd_laws(run: Run) -> str:
    run.details["laws"] = [{"name": law.name, "kind": law.kind, "shape": law.shape,
                            "args": {a.name: a.kind for a in law.args},
                            "obligations": list(law.obligations)} for law in LAWS.values()]
    for law in LAWS.values():
        run.say(law.describe())
    return "pass"


def cmd_opaque_form(run: Run) -> str:
    prog = parse_program(run.read(run.args.file))
    mod = parse_module(run.read(run.args.module))
    rep = check_opaque_form(prog.command, mod, dict(prog.vars))
    run.obligations.append({"goal": f"opaque form with respect to {mod.name}", **rep.to_json()})
    run.say(rep.describe())
    return "pass" if rep.accepted else "fail"


def _pairing(items) -> dict:
    out = {}
    for item in items or ():
        a, sep, c = item.partition("=")
        if not sep or not a or not c:
            raise UsageError(f"--pair expects ABS=CONC, got {item}")
        out[a] = c
    return out


def cmd_module_refines(run: Run) -> str:
    amod = parse_module(run.read(run.args.abstract))
    cmod = parse_module(run.read(run.args.concrete))
    ci = parse_coupling(run.read(run.args.couple))
    dom = run.domain()
    pairing = _pairing(run.args.pair)
    rep = check_module_refinement(amod, cmod, ci, dom, pairing=pairing, budget=run.args.budget,
                                  jobs=run.args.jobs)
    run.checked = rep.checked
    for pr in rep.procedures:
        run.obligations.append(pr.to_json())
        line = f"{pr.name} ~ {pr.conc_name}: {pr.verdict}"
        if pr.failed_part:
            line += f" ({pr.failed_part})"
        if pr.counterexample is not None:
            line += f" at {format_binding(pr.counterexample)}"
        if pr.message:
            line += f": {pr.message}"
        run.say(line)
    if run.args.naive:
        bound = bind_module_types(dom, amod, cmod)
        naive = []
        for name in run.args.naive:
            cname = pairing.get(name, name)
            fwd, back = naive_contextual_check(amod.proc(name), cmod.proc(cname), ci, bound,
                                               budget=run.args.budget)
            run.checked += fwd.checked + back.checked
            naive.append({"procedure": name, "concrete": cname,
                          "abstract_refined_by_concrete": fwd.to_json(),
                          "concrete_refined_by_abstract": back.to_json()})
            run.say(f"naive equivalence for {name}: abstract <= concrete {fwd.describe()}; "
                    f"concrete <= abstract {back.describe()}")
        run.details["naive"] = naive
    if any(pr.verdict == "error" for pr in rep.procedures):
        return "error"
    run.say(f"{len(rep.procedures)} procedures, " + ("all pass" if rep.passed else "some fail"))
    return "pass" if rep.passed else "fail"


def cmd_calculate(run: Run) -> str:
    amod = parse_module(run.read(run.args.module))
    ci = parse_coupling(run.read(run.args.couple))
    dom = run.domain()
    mc = calculate_module(amod, ci, dom, specialize=run.args.specialize, demonic=run.args.demonic,
                          simplify=not run.args.no_simplify, budget=run.args.budget)
    text = pp_module(mc.module)
    for out in mc.outputs:
        for cond, label in ((out.ci_check, "outputs"), (out.free_constraint, "free constraint")):
            run.checked += cond.checked
            run.obligations.append({"procedure": out.name, "condition": label, **cond.to_json()})
    run.details["coupling"] = mc.ci_class.to_json()
    run.details["lemmas"] = [lc.to_json() for lc in mc.lemmas]
    run.details["procedures"] = [o.to_json() for o in mc.outputs]
    run.details["module"] = text
    if run.args.output:
        Path(run.args.output).write_text(text)
    elif not run.args.json:
        run.say(text.rstrip("\n"))
    for out in mc.outputs:
        for cond, label in ((out.ci_check, "outputs"), (out.free_constraint, "free constraint")):
            line = f"{out.name}: {label} {cond.verdict}"
            if cond.counterexample is not None:
                line += f" at {format_binding(cond.counterexample)}"
            if cond.note:
                line += f" ({cond.note})"
            run.say(line)
        for note in out.notes:
            run.say(f"{out.name}: note: {note}")
    result = "pass" if mc.side_conditions_hold else "fail"
    if run.args.golden:
        golden = parse_module(run.read(run.args.golden))
        matches = {}
        for proc in mc.module.procs:
            want = golden.proc(proc.name) if golden.has_proc(proc.name) else None
            matches[proc.name] = bool(want is not None and want.params == proc.params
                                      and alpha_equal(want.body, proc.body))
        run.details["golden"] = matches
        run.say("golden: " + ", ".join(f"{n} {'matches' if m else 'differs'}" for n, m in matches.items()))
        if not all(matches.values()):
            result = "fail"
    if run.args.verify:
        conc = parse_module(text)
        rep = check_module_refinement(amod, conc, ci, dom, budget=run.args.budget, jobs=run.args.jobs)
        run.checked += rep.checked
        run.details["verification"] = [pr.to_json() for pr in rep.procedures]
        run.say("calculated module " + ("passes" if rep.passed else "fails") + " the combined condition")
        if not rep.passed:
            result = "fail"
    return result


def cmd_replace_calls(run: Run) -> str:
    prog = parse_program(run.read(run.args.file))
    amod = parse_module(run.read(run.args.module))
    cmod = parse_module(run.read(run.args.to))
    env = dict(prog.vars)
    new = replace_calls(prog.command, amod, cmod, pairing=_pairing(run.args.pair), env=env)
    printed = pp_program(type(prog)(new, prog.procs, prog.vars))
    run.details["program"] = printed
    if run.args.output:
        Path(run.args.output).write_text(printed)
    else:
        run.say(printed.rstrip("\n"))
    if not run.args.domain:
        return "pass"
    dom = bind_module_types(run.domain(), amod, cmod)
    rep = refines_across(dom, prog.command, amod.procs, new, cmod.procs, env, fuel=run.args.fuel,
                         budget=run.args.budget, jobs=run.args.jobs)
    run.checked = rep.checked
    run.obligations.append({"goal": "original <= replaced", **rep.to_json()})
    before = program_answers(dom, prog.command, amod.procs, env, fuel=run.args.fuel,
                             budget=run.args.budget)
    after = program_answers(dom, new, cmod.procs, env, fuel=run.args.fuel, budget=run.args.budget)
    run.details["answers"] = {"original": [binding_json(b) for b in before],
                              "replaced": [binding_json(b) for b in after]}
    run.say(f"original <= replaced: {rep.describe()}")
    run.say("answers: " + "; ".join(format_binding(b) for b in before) + " | "
            + "; ".join(format_binding(b) for b in after))
    return "pass" if rep.holds and before == after else "fail"


# ----- argument handling -----

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--domain", help="domain configuration (.rcdom)")
    common.add_argument("--fuel", type=int, help="unfolding depth for recursive calls")
    common.add_argument("--budget", type=int, help="maximum number of bindings to enumerate")
    common.add_argument("--json", action="store_true", help="print a JSON report")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for enumeration")

    ap = argparse.ArgumentParser(prog="refcalc", description="Refinement checking and module "
                                 "calculation over finite domains.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", parents=[common], help="parse a file and print it back")
    p.add_argument("file")
    p.add_argument("--kind", choices=["rc", "rcm", "rcc", "rcder", "rcdom"])
    p.set_defaults(fn=cmd_parse)

    p = sub.add_parser("semantics", parents=[common], help="tabulate ok and ef of a program")
    p.add_argument("file")
    p.add_argument("--symbolic", action="store_true", help="print the ok/ef predicates instead")
    p.set_defaults(fn=cmd_semantics)

    p = sub.add_parser("refines", parents=[common], help="check that one program refines another")
    p.add_argument("lhs")
    p.add_argument("rhs")
    p.add_argument("--context", help="assumption under which to compare")
    p.set_defaults(fn=cmd_refines)

    p = sub.add_parser("derivation", parents=[common], help="check a derivation script")
    p.add_argument("file")
    p.set_defaults(fn=cmd_derivation)

    p = sub.add_parser("laws", parents=[common], help="list the laws and their obligations")
    p.set_defaults(fn=cmd_laws)

    p = sub.add_parser("opaque-form", parents=[common], help="check a program uses a module's "
                       "type only through its procedures")
    p.add_argument("file")
    p.add_argument("--module", required=True)
    p.set_defaults(fn=cmd_opaque_form)

    p = sub.add_parser("module-refines", parents=[common], help="check one module against another")
    p.add_argument("abstract")
    p.add_argument("concrete")
    p.add_argument("--couple", required=True, help="coupling invariant (.rcc)")
    p.add_argument("--pair", action="append", metavar="ABS=CONC", help="procedure name pairing")
    p.add_argument("--naive", action="append", metavar="PROC",
                   help="also run the two-way contextual equivalence check on PROC")
    p.set_defaults(fn=cmd_module_refines)

    p = sub.add_parser("calculate", parents=[common], help="calculate a concrete module")
    p.add_argument("module")
    p.add_argument("--couple", required=True)
    p.add_argument("-o", "--output", help="write the calculated module here")
    p.add_argument("--specialize", action="store_true")
    p.add_argument("--demonic", action="store_true")
    p.add_argument("--no-simplify", action="store_true")
    p.add_argument("--golden", help="module to compare the result with, up to bound renaming")
    p.add_argument("--verify", action="store_true",
                   help="check the result against the abstract module")
    p.set_defaults(fn=cmd_calculate)

    p = sub.add_parser("replace-calls", parents=[common], help="swap a program's module")
    p.add_argument("file")
    p.add_argument("--module", required=True, help="the module the program calls")
    p.add_argument("--to", required=True, help="the module to call instead")
    p.add_argument("--pair", action="append", metavar="ABS=CONC")
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_replace_calls)
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("refcalc: --jobs must be at least 1", file=sys.stderr)
        return 2
    run = Run(args.command, args)
    try:
        result = args.fn(run)
        message = None
    except BudgetExceeded as e:
        result, message = "error", str(e)
    except UsageError as e:
        result, message = "error", str(e)
    except USER_ERRORS as e:
        result, message = "error", f"{type(e).__name__}: {e}"
    if args.json:
        print(json.dumps(run.report(result, message), indent=2))
    else:
        for line in run.lines:
            print(line)
        if message:
            print(f"refcalc: {message}", file=sys.stderr)
        elif result != "pass":
            print(result.upper())
    return EXIT[result]


if __name__ == "__main__":
    sys.exit(main())

"""Bundled fixtures and the bounded attacker corpus.

The corpus stands in for "every valid attacker": six hand-written shapes
(idle, memory priming, store-on-call, reentrant callback, call-everything,
register clobbering) plus seeded random straight-line attackers.  Attackers
never touch the reserved SLH registers.
"""

from __future__ import annotations

import random
from importlib import resources

from .lang import Unit, instr_regs, parse
from .passes import RESERVED

FIXTURES = ("gadget_pht", "gadget_stl", "rsb", "sls", "jmp_hijack", "retp_sls", "slh_j",
            "linker3", "safe_loop", "store_after_branch", "callback")
EXT_FIXTURES = ("vl_mul",)


def fixture_text(name: str) -> str:
    return resources.files("artifact.fixtures").joinpath(f"{name}.uasm").read_text()


def load_fixture(name: str) -> Unit:
    return parse(fixture_text(name), ext_vassign=name in EXT_FIXTURES)


def all_fixtures(ext: bool = False) -> dict[str, Unit]:
    names = FIXTURES + (EXT_FIXTURES if ext else ())
    return {n: load_fixture(n) for n in names}


def _regs(p: Unit) -> list[str]:
    out: set[str] = set()
    for i in p.instructions():
        out |= instr_regs(i)
    return sorted(out - set(RESERVED))


def _unit(mem: dict[int, int], bodies: dict[str, list[str]]) -> Unit:
    lines = ["attacker"]
    for a in sorted(mem):
        lines.append(f"mem {a} := {mem[a]} : S")
    for f, body in bodies.items():
        lines.append(f"fun {f}:")
        for k, ins in enumerate(body):
            lines.append(f"  {f}__{k}: {ins}")
    return parse("\n".join(lines) + "\n")


def _guarded(f: str, cell: int, calls: list[str], at: int = 0) -> list[str]:
    """Body suffix starting at item ``at`` that runs ``calls`` only on first entry."""
    return [f"load g, {cell}", f"beqz g, {f}__{at + 3}", "ret", "one <- 1",
            f"store one, {cell}"] + [f"call {c}" for c in calls] + ["ret"]


def attacker_corpus(p: Unit, n_random: int = 4, seed: int = 0) -> list[tuple[str, Unit]]:
    imports = list(p.imports) or ["a_idle"]
    others = [f for f in p.names if f != "main"]
    regs = _regs(p)
    out = []
    out.append(("idle", _unit({}, {f: ["ret"] for f in imports})))
    out.append(("prime", _unit({0: 4, 1: 2, 2: 3, 3: 5}, {f: ["ret"] for f in imports})))
    out.append(("store_in", _unit({}, {f: ["x <- 9", "store x, 0", "ret"] for f in imports})))
    if p.imports:
        out.append(("reenter", _unit({0: 4}, {f: _guarded(f, 500 + k, ["main"])
                                              for k, f in enumerate(imports)})))
        out.append(("call_all", _unit({0: 5}, {f: _guarded(f, 600 + k, others)
                                               for k, f in enumerate(imports)})))
    else:
        out.append(("reenter", _unit({0: 1}, {f: ["ret"] for f in imports})))
        out.append(("call_all", _unit({0: 5, 1: 1}, {f: ["ret"] for f in imports})))
    clobber = [f"{r} <- 1" for r in regs] + ["ret"]
    out.append(("clobber", _unit({0: 4}, {f: clobber for f in imports})))
    rng = random.Random(seed)
    for k in range(n_random):
        mem = {a: rng.randint(0, 9) for a in range(8) if rng.random() < 0.6}
        bodies = {}
        for j, f in enumerate(imports):
            body = []
            for _ in range(rng.randint(1, 5)):
                r = rng.choice(regs or ["x"])
                kind = rng.random()
                if kind < 0.4:
                    body.append(f"{r} <- {rng.randint(0, 9)}")
                elif kind < 0.7:
                    body.append(f"store {r}, {rng.randint(0, 7)}")
                else:
                    body.append(f"load {r}, {rng.randint(0, 7)}")
            if p.imports and others and rng.random() < 0.5:
                body += _guarded(f, 700 + 10 * k + j, [rng.choice(others)], at=len(body))
            else:
                body.append("ret")
            bodies[f] = body
        out.append((f"random{k}", _unit(mem, bodies)))
    return out

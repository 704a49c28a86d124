"""Non-speculative µASM semantics with value/taint pairs.

A :class:`Config` is treated as immutable: :func:`step_ns` returns a fresh one
and never mutates its argument.  Events are plain :class:`Event` values; the
silent step is represented by ``None``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from typing import Iterable, Optional

from .errors import ArithmeticOnLabel, FuelExhausted, NoMain, OutOfRangeAddress, StuckState
from .lang import (
    BOT, Assign, Beqz, Bin, Call, CondAssign, Expr, Jmp, LabelVal, Lit, Load, LoadPrv,
    ModRet, PopRet, Reg, Ret, Skip, SpBarr, Store, StorePrv, Un, VAssign, Value, WholeProgram,
)
from .taint import S, U, Taint

DEFAULT_FUEL = 100_000
ADDR_BOUND = 2 ** 16

# --------------------------------------------------------------------------
# events


@dataclass(frozen=True)
class Event:
    kind: str
    payload: tuple = ()
    taint: Taint = S

    def __str__(self):
        args = ",".join(str(p) for p in self.payload)
        return f"{self.kind}({args})^{self.taint.name}"

    @property
    def is_marker(self) -> bool:
        return self.kind in ("start", "rollback")


def start(sem: str, ctr: int) -> Event:
    return Event("start", (sem, ctr), S)


def rollback(sem: str, ctr: int) -> Event:
    return Event("rollback", (sem, ctr), S)


TERMINATE = Event("terminate", (), S)

Trace = list  # list[Event]


def _jsonable(v):
    if isinstance(v, LabelVal):
        return v.name
    if v is BOT:
        return None
    return v


def trace_to_jsonl(trace: Iterable[Event]) -> str:
    """One JSON object per event; ``spec_stack`` lists the open transactions.

    A start marker's stack already contains its own transaction and a
    rollback marker's stack still contains the one it closes.
    """
    lines, stack = [], []
    for ev in trace:
        if ev.kind == "start":
            stack.append(list(ev.payload))
        snap = [list(x) for x in stack]
        if ev.kind == "rollback" and stack:
            stack.pop()
        lines.append(json.dumps({
            "kind": ev.kind,
            "payload": [_jsonable(p) for p in ev.payload],
            "taint": ev.taint.name,
            "spec_stack": snap,
        }, separators=(",", ":")))
    return "".join(l + "\n" for l in lines)


def trace_from_jsonl(text: str) -> list[Event]:
    out = []
    for line in text.splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        payload = tuple(d["payload"])
        out.append(Event(d["kind"], payload, Taint[d["taint"]]))
    return out


def show_trace(trace: Iterable[Event]) -> str:
    return " ".join(str(e) for e in trace)


# --------------------------------------------------------------------------
# configurations


@dataclass(frozen=True)
class Options:
    store_writes_safe: bool = False  # public store writes S into the cell
    taint_bug: bool = False          # negative control: loadprv forgets its taint
    addr_bound: int = ADDR_BOUND


DEFAULT_OPTIONS = Options()


@dataclass(frozen=True)
class Config:
    prog: WholeProgram
    pc: Value
    regs: dict = field(compare=True)     # name -> (value, taint)
    mem: dict = field(compare=True)      # addr -> (value, taint)
    frames: tuple = ()                   # tuple of tuples of (label, taint)
    halted: bool = False
    opts: Options = DEFAULT_OPTIONS

    def reg(self, name: str) -> tuple[Value, Taint]:
        return self.regs.get(name, (0, S))

    def cell(self, addr: int) -> tuple[Value, Taint]:
        if addr in self.mem:
            return self.mem[addr]
        return (0, U) if addr < 0 else (0, S)

    @property
    def owner(self) -> Optional[str]:
        if isinstance(self.pc, LabelVal):
            return self.prog.owner.get(self.pc.name)
        return None

    @property
    def instr(self):
        if isinstance(self.pc, LabelVal):
            return self.prog.code.get(self.pc.name)
        return None

    @property
    def final(self) -> bool:
        return self.halted or self.pc is BOT

    def in_component(self) -> bool:
        o = self.owner
        return o is not None and not self.prog.is_attacker(o)

    def next_pc(self) -> Value:
        return next_label(self.prog, self.pc)

    def with_pc(self, pc: Value) -> "Config":
        return replace(self, pc=pc)


_CONFIG_FIELDS = tuple(f.name for f in fields(Config))


def replace(c: Config, **changes) -> Config:
    """Copy with changed fields; skips dataclass re-initialisation on the hot path."""
    n = object.__new__(Config)
    d = n.__dict__
    src = c.__dict__
    for f in _CONFIG_FIELDS:
        d[f] = src[f]
    d.update(changes)
    return n


def next_label(prog: WholeProgram, pc: Value) -> Value:
    if not isinstance(pc, LabelVal):
        return BOT
    n = prog.successor.get(pc.name)
    return LabelVal(n) if n is not None else BOT


def initial_state(w: WholeProgram, opts: Options = DEFAULT_OPTIONS) -> Config:
    if w.starts.get("main") is None or "main" not in w.component_names:
        raise NoMain("component defines no main")
    mem = {a: (v, t) for a, v, t in w.memory}
    return Config(w, LabelVal(w.starts["main"]), {}, mem, ((),), False, opts)


# --------------------------------------------------------------------------
# expressions


def _num(v, op):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ArithmeticOnLabel(f"operator {op} applied to non-number {v!r}")
    return v


def _truthy(v):
    if v is BOT:
        raise ArithmeticOnLabel("logical operator applied to bot")
    if isinstance(v, LabelVal):
        return True
    return v != 0


def eval_expr(regs, e: Expr) -> tuple[Value, Taint]:
    """Evaluate ``e`` against a register map ``name -> (value, taint)``."""
    if isinstance(e, Lit):
        return e.value, S
    if isinstance(e, Reg):
        return regs.get(e.name, (0, S))
    if isinstance(e, Un):
        v, t = eval_expr(regs, e.arg)
        if e.op == "!":
            return (0 if _truthy(v) else 1), t
        return -_num(v, "-"), t
    if isinstance(e, Bin):
        a, ta = eval_expr(regs, e.left)
        b, tb = eval_expr(regs, e.right)
        t = ta if ta >= tb else tb
        op = e.op
        if op == "==":
            return int(a == b), t
        if op == "!=":
            return int(a != b), t
        if op == "&&":
            return int(_truthy(a) and _truthy(b)), t
        if op == "||":
            return int(_truthy(a) or _truthy(b)), t
        a, b = _num(a, op), _num(b, op)
        if op == "+":
            return a + b, t
        if op == "-":
            return a - b, t
        if op == "*":
            return a * b, t
        if op == "/":
            return (0 if b == 0 else int(a / b)), t
        if op == "%":
            return (0 if b == 0 else a - b * int(a / b)), t
        if op == "<":
            return int(a < b), t
        if op == "<=":
            return int(a <= b), t
        if op == ">":
            return int(a > b), t
        if op == ">=":
            return int(a >= b), t
    raise TypeError(e)


# --------------------------------------------------------------------------
# one step


def _addr(c: Config, e: Expr, private_ok: bool) -> tuple[int, Taint]:
    v, t = eval_expr(c.regs, e)
    if isinstance(v, bool) or not isinstance(v, int):
        raise StuckState(f"address {v!r} is not a number")
    if abs(v) > c.opts.addr_bound:
        raise OutOfRangeAddress(f"address {v} outside ±{c.opts.addr_bound}")
    if v < 0 and not private_ok:
        raise StuckState(f"public access to private address {v}")
    return v, t


def _set(d: dict, k, v) -> dict:
    d = dict(d)
    d[k] = v
    return d


def step_ns(c: Config) -> tuple[Config, Optional[Event]]:
    """One non-speculative step; returns the raw (unfiltered) event."""
    if c.halted:
        raise StuckState("configuration already halted")
    if c.pc is BOT:
        return replace(c, halted=True), TERMINATE
    i = c.instr
    if i is None:
        raise StuckState(f"no instruction at {c.pc!r}")
    nxt = c.next_pc()
    match i:
        case Skip() | SpBarr():
            return c.with_pc(nxt), None
        case Assign(x, e):
            return replace(c, pc=nxt, regs=_set(c.regs, x, eval_expr(c.regs, e))), None
        case CondAssign(x, e, g):
            gv, _ = eval_expr(c.regs, g)
            if gv == 0 and not isinstance(gv, LabelVal) and gv is not BOT:
                regs = _set(c.regs, x, eval_expr(c.regs, e))
                return replace(c, pc=nxt, regs=regs), None
            return c.with_pc(nxt), None
        case Load(x, e):
            n, te = _addr(c, e, private_ok=False)
            cell = c.cell(n)
            return (replace(c, pc=nxt, regs=_set(c.regs, x, cell)),
                    Event("load", (n,), te.join(cell[1])))
        case LoadPrv(x, e):
            n, te = _addr(c, e, private_ok=True)
            v, tc = c.cell(n)
            if c.opts.taint_bug:
                return (replace(c, pc=nxt, regs=_set(c.regs, x, (v, te))),
                        Event("load", (n,), te))
            return (replace(c, pc=nxt, regs=_set(c.regs, x, (v, U))),
                    Event("load", (n,), te.join(tc)))
        case Store(x, e):
            n, te = _addr(c, e, private_ok=False)
            v, tx = c.reg(x)
            if c.opts.store_writes_safe:
                tx = S
            return (replace(c, pc=nxt, mem=_set(c.mem, n, (v, tx))),
                    Event("store", (n,), te))
        case StorePrv(x, e):
            n, te = _addr(c, e, private_ok=True)
            return (replace(c, pc=nxt, mem=_set(c.mem, n, c.reg(x))),
                    Event("store", (n,), te))
        case VAssign(x, y, z):
            (vy, ty), (vz, tz) = c.reg(y), c.reg(z)
            t = ty.join(tz)
            res = _num(vy, "*") * _num(vz, "*")
            return (replace(c, pc=nxt, regs=_set(c.regs, x, (res, t))),
                    Event("op", (vy, vz), t))
        case Beqz(x, l):
            v, t = c.reg(x)
            if v is BOT:
                raise StuckState(f"beqz on bot in {x}")
            target = LabelVal(l) if v == 0 and not isinstance(v, LabelVal) else nxt
            if target is BOT:
                return c.with_pc(BOT), Event("pc", (None,), t)
            return c.with_pc(target), Event("pc", (target.name,), t)
        case Jmp(e):
            v, t = eval_expr(c.regs, e)
            if not isinstance(v, LabelVal) or c.prog.owner.get(v.name) != c.owner:
                raise StuckState(f"jmp to {v!r} is not an internal label")
            return c.with_pc(v), Event("pc", (v.name,), t)
        case Call(f):
            caller, callee = c.owner, f
            ret_to = (nxt.name if isinstance(nxt, LabelVal) else None, S)
            target = LabelVal(c.prog.starts[f]) if c.prog.starts.get(f) else BOT
            frames = c.frames[:-1] + (c.frames[-1] + (ret_to,),)
            a_caller, a_callee = c.prog.is_attacker(caller), c.prog.is_attacker(callee)
            if a_caller == a_callee:
                return replace(c, pc=target, frames=frames), None
            frames = frames + ((),)
            kind = "call?" if a_caller else "call!"
            return replace(c, pc=target, frames=frames), Event(kind, (f,), S)
        case Ret():
            top = c.frames[-1]
            if top:
                lab, _ = top[-1]
                pc = LabelVal(lab) if lab is not None else BOT
                return replace(c, pc=pc, frames=c.frames[:-1] + (top[:-1],)), None
            if len(c.frames) > 1:
                below = c.frames[-2]
                if not below:
                    raise StuckState("return with an empty caller frame")
                lab, _ = below[-1]
                pc = LabelVal(lab) if lab is not None else BOT
                frames = c.frames[:-2] + (below[:-1],)
                kind = "ret?" if c.prog.is_attacker(c.owner) else "ret!"
                return replace(c, pc=pc, frames=frames), Event(kind, (), S)
            return replace(c, pc=BOT, frames=c.frames), None
        case PopRet():
            top = c.frames[-1]
            if not top:
                raise StuckState("popret on an empty frame")
            return replace(c, pc=nxt, frames=c.frames[:-1] + (top[:-1],)), None
        case ModRet(e):
            top = c.frames[-1]
            if not top:
                raise StuckState("modret on an empty frame")
            v, t = eval_expr(c.regs, e)
            if not isinstance(v, LabelVal):
                raise StuckState(f"modret target {v!r} is not a label")
            return replace(c, pc=nxt, frames=c.frames[:-1] + (top[:-1] + ((v.name, t),),)), None
    raise TypeError(i)


def return_target(c: Config) -> tuple[Optional[str], bool]:
    """Where a ``ret`` at ``c`` goes: (label or None, crosses boundary)."""
    top = c.frames[-1]
    if top:
        return top[-1][0], False
    if len(c.frames) > 1 and c.frames[-2]:
        return c.frames[-2][-1][0], True
    return None, False


def attacker_internal(prog: WholeProgram, before: Config, after: Config) -> bool:
    """True when a step stays inside one attacker function."""
    f = before.owner
    return f is not None and prog.is_attacker(f) and after.owner == f


def run_ns(w: WholeProgram, fuel: int = DEFAULT_FUEL, opts: Options = DEFAULT_OPTIONS) -> list[Event]:
    c = initial_state(w, opts)
    trace: list[Event] = []
    steps = 0
    while not c.halted:
        if steps >= fuel:
            raise FuelExhausted(f"no termination within {fuel} steps")
        steps += 1
        c2, ev = step_ns(c)
        if ev is not None and not attacker_internal(w, c, c2):
            trace.append(Event(ev.kind, ev.payload, S))
        c = c2
    return trace


def run_ns_config(w: WholeProgram, fuel: int = DEFAULT_FUEL, opts: Options = DEFAULT_OPTIONS) -> Config:
    """Like :func:`run_ns` but returns the final configuration."""
    c = initial_state(w, opts)
    steps = 0
    while not c.halted:
        if steps >= fuel:
            raise FuelExhausted(f"no termination within {fuel} steps")
        steps += 1
        c, _ = step_ns(c)
    return c

"""Always-mispredict speculative execution over a stack of instances.

Each speculation source contributes a misprediction rule for the instructions
in its trigger set.  When the top instance executes such an instruction inside
component code, the architecturally correct successor replaces it and the
mispredicted instances are pushed above it, so they run first.  A speculative
instance is rolled back when its window reaches zero, when it halts, or when it
gets stuck.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .errors import ArithmeticOnLabel, FuelExhausted, IncompatibleSources, StuckState
from .lang import BOT, Beqz, Call, Jmp, LabelVal, Ret, SpBarr, Store, StorePrv, WholeProgram
from .machine import (
    DEFAULT_FUEL, DEFAULT_OPTIONS, Config, Event, Options, eval_expr, initial_state,
    next_label, return_target, rollback, start, step_ns,
)
from .taint import S, U, Taint

SEMS = ("B", "J", "S", "R", "SLS")
DEFAULT_OMEGA = 20
MAX_ITERATIONS = 5_000_000

_TRIGGERS = {
    "B": frozenset({"beqz"}),
    "J": frozenset({"jmp_indirect"}),
    "S": frozenset({"store", "storeprv"}),
    "R": frozenset({"call", "ret"}),
    "SLS": frozenset({"ret"}),
}


# instruction types that can open a transaction (R's call only updates the RSB)
_TRIGGER_TYPES = {"B": (Beqz,), "J": (Jmp,), "S": (Store, StorePrv), "R": (Ret,), "SLS": (Ret,)}


def trigger_set(sem: str) -> frozenset[str]:
    return _TRIGGERS[sem]


def speculation_instrs(sems: Iterable[str]) -> frozenset[str]:
    out: set[str] = set()
    for s in sems:
        out |= _TRIGGERS[s]
    return frozenset(out)


def parse_sources(text: str | Iterable[str] | None) -> frozenset[str]:
    if text is None:
        return frozenset()
    if isinstance(text, str):
        items = [t.strip() for t in text.split(",") if t.strip() and t.strip() not in ("NS", "-")]
    else:
        items = list(text)
    bad = [t for t in items if t not in SEMS]
    if bad:
        raise ValueError(f"unknown speculation source(s) {bad}; expected a subset of {SEMS}")
    return check_combinable(frozenset(items))


def check_combinable(active: Iterable[str]) -> frozenset[str]:
    active = frozenset(active)
    if {"R", "SLS"} <= active:
        raise IncompatibleSources("R and SLS both speculate on ret and cannot be combined")
    return active


def show_set(s: Iterable[str]) -> str:
    s = set(s)
    return "+".join(x for x in SEMS if x in s) or "NS"


@dataclass
class Instance:
    cfg: Config
    window: Optional[int]          # None for the non-speculative bottom
    pc_taint: Taint = S
    rsb: Optional[tuple] = None
    sem: Optional[str] = None
    ctr: Optional[int] = None
    started: bool = False
    stuck: bool = False

    @property
    def speculative(self) -> bool:
        return self.window is not None


def _spec_child(parent: Instance, cfg: Config, sem: str, budget: int, omega: int,
                rsb=None) -> Instance:
    return Instance(cfg, min(omega, budget), U, parent.rsb if rsb is None else rsb, sem)


def mispredict(sem: str, inst: Instance, budget: int, omega: int) -> list[Instance]:
    """Mispredicted instances for ``inst``'s current instruction (before its step).

    The R source also needs the architectural RSB update, which is handled in
    :class:`SpecMachine`; here R returns only the instance for the RSB top.
    """
    c = inst.cfg
    if not c.in_component():
        return []
    i = c.instr
    if sem == "B" and isinstance(i, Beqz):
        v, _ = c.reg(i.reg)
        if v is BOT:
            return []
        taken = v == 0 and not isinstance(v, LabelVal)
        pc = c.next_pc() if taken else LabelVal(i.label)
        return [_spec_child(inst, c.with_pc(pc), sem, budget, omega)]
    if sem == "J" and isinstance(i, Jmp) and i.indirect:
        try:
            correct, _ = eval_expr(c.regs, i.target)
        except ArithmeticOnLabel:
            correct = BOT
        out = []
        for lab in c.prog.component_labels():
            if isinstance(correct, LabelVal) and correct.name == lab:
                continue
            out.append(_spec_child(inst, c.with_pc(LabelVal(lab)), sem, budget, omega))
        return out
    if sem == "S" and isinstance(i, (Store, StorePrv)):
        return [_spec_child(inst, c.with_pc(c.next_pc()), sem, budget, omega)]
    if sem == "SLS" and isinstance(i, Ret):
        return [_spec_child(inst, c.with_pc(c.next_pc()), sem, budget, omega)]
    if sem == "R" and isinstance(i, Ret) and inst.rsb:
        target, _ = return_target(c)
        if target is None or c.prog.is_attacker(c.prog.owner.get(target)):
            return []
        top = inst.rsb[-1]
        if top == target:
            return []
        pc = LabelVal(top) if top is not None else BOT
        return [_spec_child(inst, c.with_pc(pc), sem, budget, omega, rsb=inst.rsb[:-1])]
    return []


class SpecMachine:
    """Mutable driver around the instance stack; :func:`run_spec` wraps it."""

    def __init__(self, w: WholeProgram, active: Iterable[str] = (), omega: int = DEFAULT_OMEGA,
                 opts: Options = DEFAULT_OPTIONS):
        self.prog = w
        self.active = check_combinable(active)
        self.omega = omega
        rsb = () if "R" in self.active else None
        self.stack = [Instance(initial_state(w, opts), None, S, rsb)]
        self.counters = {s: 0 for s in SEMS}
        self.order = [sem for sem in SEMS if sem in self.active]
        self.trigger_types = tuple({t for sem in self.order for t in _TRIGGER_TYPES[sem]})
        self.open: list[tuple[str, int]] = []
        self.done = False

    def step(self) -> Optional[Event]:
        top = self.stack[-1]
        if top.speculative:
            if not top.started:
                top.ctr = self.counters[top.sem]
                self.counters[top.sem] += 1
                top.started = True
                self.open.append((top.sem, top.ctr))
                return start(top.sem, top.ctr)
            if top.window <= 0 or top.stuck or top.cfg.final:
                self.stack.pop()
                self.open.pop()
                return rollback(top.sem, top.ctr)
            if isinstance(top.cfg.instr, SpBarr):
                top.window = 0
                return None
        c = top.cfg
        i = c.instr
        owner = c.owner
        in_comp = owner is not None and owner not in self.prog.imports
        mis: list[Instance] = []
        budget = self.omega if not top.speculative else top.window - 1
        if in_comp and isinstance(i, self.trigger_types) and not c.final:
            for sem in self.order:
                mis.extend(mispredict(sem, top, budget, self.omega))
        rsb = top.rsb
        if rsb is not None and in_comp and not c.final:
            if isinstance(i, Call):
                nxt = next_label(self.prog, c.pc)
                rsb = rsb + ((nxt.name if isinstance(nxt, LabelVal) else None),)
            elif isinstance(i, Ret) and rsb:
                target, _ = return_target(c)
                if target is not None and not self.prog.is_attacker(self.prog.owner.get(target)):
                    rsb = rsb[:-1]
        try:
            c2, ev = step_ns(c)
        except (StuckState, ArithmeticOnLabel):
            if not top.speculative:
                raise
            top.stuck = True
            ev = None
            c2 = c
        else:
            top.cfg = c2
        top.rsb = rsb
        if top.speculative:
            top.window -= 1
        if mis:
            # first mispredicted target ends up on top
            self.stack.extend(reversed(mis))
        if ev is None:
            return None
        if owner is not None and not in_comp and c2.owner == owner:
            return None     # inside one attacker function
        if ev.kind == "terminate":
            if top.speculative:
                return None
            self.done = True
            return ev
        if ev.taint is S or top.pc_taint is U:
            return ev
        # the bottom instance, and boundary events anywhere, are observed as S
        return Event(ev.kind, ev.payload, S)

    def events(self, fuel: int = DEFAULT_FUEL, max_iterations: int = MAX_ITERATIONS):
        """Yield observable events until termination.

        ``fuel`` bounds architectural steps (those of the bottom instance), so
        a program exhausts it exactly when :func:`run_ns` would.  Speculative
        work always terminates but can grow exponentially with the window;
        ``max_iterations`` caps it.
        """
        steps = iters = 0
        while not self.done:
            if len(self.stack) == 1:
                if steps >= fuel:
                    raise FuelExhausted(f"no termination within {fuel} steps")
                steps += 1
            iters += 1
            if iters > max_iterations:
                raise FuelExhausted(f"speculative exploration exceeded {max_iterations} iterations")
            ev = self.step()
            if ev is not None:
                yield ev

    def run(self, fuel: int = DEFAULT_FUEL, max_iterations: int = MAX_ITERATIONS) -> list[Event]:
        return list(self.events(fuel, max_iterations))


def run_spec(w: WholeProgram, active: Iterable[str] = (), omega: int = DEFAULT_OMEGA,
             fuel: int = DEFAULT_FUEL, opts: Options = DEFAULT_OPTIONS,
             max_iterations: int = None) -> list[Event]:
    m = SpecMachine(w, active, omega, opts)
    return m.run(fuel, MAX_ITERATIONS if max_iterations is None else max_iterations)


def spec_stacks(trace: Iterable[Event]) -> list[tuple[tuple[str, int], ...]]:
    """Open transactions at each event (markers include their own)."""
    out, stack = [], []
    for ev in trace:
        if ev.kind == "start":
            stack.append(tuple(ev.payload))
        out.append(tuple(stack))
        if ev.kind == "rollback" and stack:
            stack.pop()
    return out

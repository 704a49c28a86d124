"""Speculative Safety / Non-Interference checkers and bounded robust harnesses.

Robustness is approximated by an explicit attacker corpus; nothing here
quantifies over all attackers.
"""

from __future__ import annotations

import random
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .compose import nonspec_projection, first_divergence
from .lang import Unit, link
from .machine import DEFAULT_FUEL, DEFAULT_OPTIONS, Event, Options
from .spec import (
    DEFAULT_OMEGA, MAX_ITERATIONS, SpecMachine, check_combinable, run_spec, show_set, spec_stacks,
)
from .taint import S, U

VALUE_RANGE = (0, 1023)


def is_safe_trace(trace: Iterable[Event]) -> bool:
    return all(e.taint is S for e in trace)


@dataclass
class Verdict:
    prop: str
    safe: bool
    sources: str = ""
    index: Optional[int] = None
    event: Optional[Event] = None
    stack: tuple = ()
    attacker: Optional[str] = None
    detail: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {"property": self.prop, "verdict": "pass" if self.safe else "fail",
             "sources": self.sources}
        if self.index is not None:
            d["index"] = self.index
        if self.event is not None:
            d["event"] = str(self.event)
        if self.stack:
            d["spec_stack"] = [list(x) for x in self.stack]
        if self.attacker is not None:
            d["attacker"] = self.attacker
        d.update(self.detail)
        return d


def first_unsafe(trace: list[Event]) -> Optional[int]:
    for k, e in enumerate(trace):
        if e.taint is U:
            return k
    return None


def ss_of_trace(trace: list[Event], sources: str = "") -> Verdict:
    k = first_unsafe(trace)
    if k is None:
        return Verdict("SS", True, sources)
    return Verdict("SS", False, sources, k, trace[k], spec_stacks(trace)[k])


def check_ss(w, s: Iterable[str] = (), omega: int = DEFAULT_OMEGA, fuel: int = DEFAULT_FUEL,
             opts: Options = DEFAULT_OPTIONS) -> Verdict:
    """Stops at the first unsafe event, so unsafe runs are cheap even when the full trace is not."""
    s = check_combinable(s)
    stack: list[tuple] = []
    for k, ev in enumerate(SpecMachine(w, s, omega, opts).events(fuel, MAX_ITERATIONS)):
        if ev.kind == "start":
            stack.append(tuple(ev.payload))
        if ev.taint is U:
            return Verdict("SS", False, show_set(s), k, ev, tuple(stack))
        if ev.kind == "rollback":
            stack.pop()
    return Verdict("SS", True, show_set(s))


# --------------------------------------------------------------------------
# low equivalence


def gen_low_equiv(p: Unit, seed, value_range: tuple[int, int] = VALUE_RANGE) -> Unit:
    """Fresh private values for every initialised private cell; everything else kept."""
    rng = random.Random(seed)
    mem = p.mem_dict()
    lo, hi = value_range
    out = {a: ((rng.randint(lo, hi), t) if a < 0 else (v, t)) for a, (v, t) in mem.items()}
    return p.with_memory(out)


def with_secrets(p: Unit, secrets: dict[int, int]) -> Unit:
    mem = p.mem_dict()
    for a, v in secrets.items():
        mem[a] = (v, mem.get(a, (0, U))[1])
    return p.with_memory(mem)


def variant_pairs(p: Unit, pairs: int, seed: int = 0):
    rng = random.Random(seed)
    for _ in range(pairs):
        yield gen_low_equiv(p, rng.getrandbits(64)), gen_low_equiv(p, rng.getrandbits(64))


def sni_pair(p1: Unit, p2: Unit, a: Optional[Unit], s, omega=DEFAULT_OMEGA, fuel=DEFAULT_FUEL,
             opts: Options = DEFAULT_OPTIONS):
    """(nonspec equal?, first full-trace divergence or None, t1, t2)."""
    t1 = run_spec(link(a, p1), s, omega, fuel, opts)
    t2 = run_spec(link(a, p2), s, omega, fuel, opts)
    same_ns = nonspec_projection(t1) == nonspec_projection(t2)
    return same_ns, first_divergence(t1, t2), t1, t2


def check_sni(p: Unit, a: Optional[Unit], s: Iterable[str] = (), pairs: int = 50,
              omega: int = DEFAULT_OMEGA, fuel: int = DEFAULT_FUEL, seed: int = 0,
              opts: Options = DEFAULT_OPTIONS, variants=None) -> Verdict:
    """``variants`` overrides the generated pairs with explicit (p1, p2) tuples."""
    s = check_combinable(s)
    tried = 0
    for p1, p2 in (variants if variants is not None else variant_pairs(p, pairs, seed)):
        tried += 1
        same_ns, d, t1, t2 = sni_pair(p1, p2, a, s, omega, fuel, opts)
        if same_ns and d is not None:
            ev = t1[d] if d < len(t1) else (t2[d] if d < len(t2) else None)
            return Verdict("SNI", False, show_set(s), d, ev, spec_stacks(t1)[d] if d < len(t1) else (),
                           detail={"left": str(t1[d]) if d < len(t1) else None,
                                   "right": str(t2[d]) if d < len(t2) else None,
                                   "pairs_tried": tried, "seed": seed})
    return Verdict("SNI", True, show_set(s), detail={"pairs_tried": tried, "seed": seed})


# --------------------------------------------------------------------------
# robust harnesses


def check_robust(prop: str, p: Unit, corpus, s: Iterable[str] = (), omega: int = DEFAULT_OMEGA,
                 fuel: int = DEFAULT_FUEL, pairs: int = 20, seed: int = 0,
                 opts: Options = DEFAULT_OPTIONS) -> Verdict:
    """Conjunction over ``corpus``, a list of (name, attacker) pairs."""
    s = check_combinable(s)
    corpus = list(corpus)
    if not corpus:
        warnings.warn("empty attacker corpus: robust verdict is vacuous")
        return Verdict(f"R{prop}", True, show_set(s), detail={"attackers": 0, "vacuous": True})
    for name, a in corpus:
        if prop == "SS":
            v = check_ss(link(a, p), s, omega, fuel, opts)
        elif prop == "SNI":
            v = check_sni(p, a, s, pairs, omega, fuel, seed, opts)
        else:
            raise ValueError(f"unknown property {prop}")
        if not v.safe:
            v.prop = f"R{prop}"
            v.attacker = name
            return v
    return Verdict(f"R{prop}", True, show_set(s), detail={"attackers": len(corpus)})


@dataclass
class SSImpliesSNIReport:
    sources: str
    pairs: int
    eligible: int = 0
    counterexamples: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.counterexamples


def safe_run(w, s, omega: int = DEFAULT_OMEGA, fuel: int = DEFAULT_FUEL,
             opts: Options = DEFAULT_OPTIONS) -> Optional[list[Event]]:
    """The full trace if every event is safe, else None (stopping at the first unsafe one)."""
    trace = []
    for ev in SpecMachine(w, s, omega, opts).events(fuel, MAX_ITERATIONS):
        if ev.taint is U:
            return None
        trace.append(ev)
    return trace


def check_ss_implies_sni(p: Unit, a: Optional[Unit], s: Iterable[str] = (), pairs: int = 100,
                         omega: int = DEFAULT_OMEGA, fuel: int = DEFAULT_FUEL, seed: int = 0,
                         opts: Options = DEFAULT_OPTIONS) -> SSImpliesSNIReport:
    """Count pairs where both traces are safe; any SNI divergence among them is a counterexample."""
    s = check_combinable(s)
    rep = SSImpliesSNIReport(show_set(s), pairs)
    runs: dict = {}   # variants differ only in memory and runs are deterministic

    def run(q):
        if q.memory not in runs:
            runs[q.memory] = safe_run(link(a, q), s, omega, fuel, opts)
        return runs[q.memory]

    for k, (p1, p2) in enumerate(variant_pairs(p, pairs, seed)):
        t1 = run(p1)
        t2 = None if t1 is None else run(p2)
        if t2 is None:
            continue
        rep.eligible += 1
        d = first_divergence(t1, t2)
        if d is not None and nonspec_projection(t1) == nonspec_projection(t2):
            rep.counterexamples.append({"pair": k, "index": d,
                                        "left": str(t1[d]) if d < len(t1) else None,
                                        "right": str(t2[d]) if d < len(t2) else None})
    return rep

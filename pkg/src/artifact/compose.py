"""Trace projections, source-set lattice, and empirical well-formedness checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Optional

from .errors import MalformedBrackets
from .lang import WholeProgram
from .machine import DEFAULT_FUEL, DEFAULT_OPTIONS, Event, Options
from .spec import DEFAULT_OMEGA, SEMS, check_combinable, run_spec, show_set


def _scan(trace: Iterable[Event], drop_when: Callable[[list], bool]):
    """Yield (event, keep) pairs; ``drop_when(open_stack)`` decides removal.

    The stack passed for a marker includes the marker's own transaction.
    """
    stack: list[tuple] = []
    for ev in trace:
        if ev.kind == "start":
            stack.append(tuple(ev.payload))
            yield ev, not drop_when(stack)
        elif ev.kind == "rollback":
            if not stack or stack[-1] != tuple(ev.payload):
                raise MalformedBrackets(f"rollback{tuple(ev.payload)} does not close the innermost start")
            yield ev, not drop_when(stack)
            stack.pop()
        else:
            yield ev, not drop_when(stack)
    if stack:
        raise MalformedBrackets(f"unclosed transactions {stack}")


def nonspec_projection(trace: Iterable[Event]) -> list[Event]:
    return [e for e, keep in _scan(trace, lambda st: bool(st)) if keep]


def spec_projection(trace: Iterable[Event]) -> list[Event]:
    return [e for e, keep in _scan(trace, lambda st: bool(st)) if not keep]


def source_projection(trace: Iterable[Event], sem: str) -> list[Event]:
    """Remove every ``sem`` transaction together with everything inside it."""
    return [e for e, keep in _scan(trace, lambda st: any(s == sem for s, _ in st)) if keep]


def renumber(trace: Iterable[Event]) -> list[Event]:
    """Rename transaction counters per source in order of first appearance."""
    seen: dict[tuple, int] = {}
    nxt: dict[str, int] = {}
    out = []
    for e in trace:
        if e.is_marker:
            sem, ctr = e.payload
            key = (sem, ctr)
            if key not in seen:
                seen[key] = nxt.get(sem, 0)
                nxt[sem] = seen[key] + 1
            e = Event(e.kind, (sem, seen[key]), e.taint)
        out.append(e)
    return out


# --------------------------------------------------------------------------
# the lattice of combinable source sets


def combinable_sets(include_empty: bool = False) -> list[frozenset[str]]:
    """All combinable source sets, ordered by size then source order."""
    out = [frozenset()] if include_empty else []
    for k in range(1, len(SEMS) + 1):
        for c in combinations(SEMS, k):
            s = frozenset(c)
            if not {"R", "SLS"} <= s:
                out.append(s)
    return out


def leakage_leq(a: Iterable[str], b: Iterable[str]) -> bool:
    a, b = check_combinable(a), check_combinable(b)
    return a <= b


def supersets(base: Iterable[str]) -> list[frozenset[str]]:
    base = frozenset(base)
    return [s for s in combinable_sets() if base <= s]


# --------------------------------------------------------------------------
# well-formedness checks


@dataclass
class WfcReport:
    check: str
    program: str
    x: str
    y: str
    ok: bool
    mismatches: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"check": self.check, "program": self.program, "x": self.x, "y": self.y,
                "ok": self.ok, "mismatches": self.mismatches}


def first_divergence(t1: list[Event], t2: list[Event]) -> Optional[int]:
    for k, (a, b) in enumerate(zip(t1, t2)):
        if a != b:
            return k
    if len(t1) != len(t2):
        return min(len(t1), len(t2))
    return None


def _runner(w, omega, fuel, opts):
    cache: dict = {}

    def run(s):
        s = frozenset(s)
        if s not in cache:
            cache[s] = run_spec(w, s, omega, fuel, opts)
        return cache[s]
    return run


def check_projection_preservation(w: WholeProgram, x: Iterable[str], y: Iterable[str], *,
                                  omega: int = DEFAULT_OMEGA, fuel: int = DEFAULT_FUEL,
                                  opts: Options = DEFAULT_OPTIONS, name: str = "",
                                  run: Optional[Callable] = None) -> WfcReport:
    """Both directions: project y out of the x∪y run and compare with the x run, and vice versa."""
    x, y = frozenset(x), frozenset(y)
    if x & y:
        raise ValueError("x and y must be disjoint")
    check_combinable(x | y)
    run = run or _runner(w, omega, fuel, opts)
    both = run(x | y)
    mism = []
    for keep, drop in ((x, y), (y, x)):
        t = both
        for sem in SEMS:
            if sem in drop:
                t = source_projection(t, sem)
        got, want = renumber(t), renumber(run(keep))
        k = first_divergence(got, want)
        if k is not None:
            mism.append({"kept": show_set(keep), "index": k,
                         "got": str(got[k]) if k < len(got) else None,
                         "want": str(want[k]) if k < len(want) else None})
    return WfcReport("projection_preservation", name, show_set(x), show_set(y), not mism, mism)


def check_confluence(w: WholeProgram, s: Iterable[str], trials: int = 5, *,
                     omega: int = DEFAULT_OMEGA, fuel: int = DEFAULT_FUEL,
                     opts: Options = DEFAULT_OPTIONS, name: str = "",
                     runner: Callable = run_spec) -> WfcReport:
    """Re-run ``trials`` times and compare traces; ``runner`` is swappable for negative controls."""
    s = check_combinable(s)
    ref = None
    mism = []
    for k in range(trials):
        t = runner(w, s, omega, fuel, opts)
        if ref is None:
            ref = t
            continue
        d = first_divergence(ref, t)
        if d is not None:
            mism.append({"trial": k, "index": d})
    return WfcReport("confluence", name, show_set(s), "", not mism, mism)


def check_rollback_transparency(w: WholeProgram, s: Iterable[str], *, omega: int = DEFAULT_OMEGA,
                                fuel: int = DEFAULT_FUEL, opts: Options = DEFAULT_OPTIONS,
                                name: str = "") -> WfcReport:
    from .machine import run_ns
    got = nonspec_projection(run_spec(w, s, omega, fuel, opts))
    want = run_ns(w, fuel, opts)
    d = first_divergence(got, want)
    mism = [] if d is None else [{"index": d}]
    return WfcReport("rollback_transparency", name, show_set(s), "", d is None, mism)

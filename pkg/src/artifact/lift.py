"""Lifting a countermeasure's security to larger sets of speculation sources.

A pass secure for its base source ``x`` is lifted to ``s = x ∪ y`` when three
things hold:

* it is independent of ``y``: decided syntactically (SI) when possible, else
  observed over the corpus (compiled code stays SS under ``y`` whenever the
  source was);
* its ``x`` speculation is trapped, or transactions of one source nested
  inside another only produce safe events at ``s``;
* the corpus confirms preservation: members SS under ``y`` compile to code SS
  under ``s``.

Everything observed is bounded by the corpus; only SI is decided.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from .compose import supersets
from .corpus import EXT_FIXTURES, FIXTURES, attacker_corpus, load_fixture
from .errors import NotApplicable
from .lang import Unit, link
from .machine import DEFAULT_FUEL, DEFAULT_OPTIONS, Options
from .passes import PASSES, PassDescriptor, compile
from .security import Verdict, check_ss
from .spec import DEFAULT_OMEGA, MAX_ITERATIONS, SEMS, SpecMachine, check_combinable, show_set
from .spec import speculation_instrs
from .taint import U

# instruction classes whose insertion can introduce a leak on its own
_SENSITIVE = frozenset({"beqz", "jmp_indirect", "store", "load", "assign"})


def _desc(d: PassDescriptor | str) -> PassDescriptor:
    return PASSES[d] if isinstance(d, str) else d


@dataclass(frozen=True)
class Member:
    """One corpus entry: a fixture linked against one attacker."""
    name: str
    source: Unit
    attacker: Unit
    ext_vassign: bool = False

    def whole(self, p: Optional[Unit] = None):
        return link(self.attacker, self.source if p is None else p)


def lift_corpus(d: PassDescriptor | str, n_random: int = 4, seed: int = 0,
                programs: Optional[dict[str, Unit]] = None, ext_vassign: bool = False) -> list[Member]:
    """Programs times attackers.

    By default the bundled fixtures are used, with the variable-latency ones
    only for the pass that masks vassign operands.
    """
    d = _desc(d)
    if programs is None:
        names = FIXTURES + (EXT_FIXTURES if d.id == "uslh_b" else ())
        programs = {n: load_fixture(n) for n in names}
        ext = set(EXT_FIXTURES)
    else:
        ext = set(programs) if ext_vassign else set()
    out = []
    for n, p in programs.items():
        for an, a in attacker_corpus(p, n_random, seed):
            out.append(Member(f"{n}/{an}", p, a, n in ext))
    return out


# --------------------------------------------------------------------------
# decided


def syntactic_independence(d: PassDescriptor | str, y: Iterable[str]) -> Verdict:
    d = _desc(d)
    y = check_combinable(y)
    clash = d.inserted & speculation_instrs(y)
    sens = d.inserted & _SENSITIVE
    detail = {"pass": d.id, "inserted": sorted(d.inserted)}
    if clash:
        detail["triggers_y"] = sorted(clash)
    if sens:
        detail["sensitive"] = sorted(sens)
    return Verdict("SI", not clash and not sens, show_set(y), detail=detail)


# --------------------------------------------------------------------------
# observed


class _Cache:
    """Memoised SS verdicts keyed by (member, compiled?, sources)."""

    def __init__(self, d: PassDescriptor, omega: int, fuel: int, opts: Options):
        self.d, self.omega, self.fuel, self.opts = d, omega, fuel, opts
        self.compiled: dict[str, Unit] = {}
        self.ss: dict[tuple, Verdict] = {}

    def target(self, m: Member) -> Unit:
        if m.name not in self.compiled:
            self.compiled[m.name] = compile(self.d, m.source, ext_vassign=m.ext_vassign)
        return self.compiled[m.name]

    def check(self, m: Member, s: frozenset, compiled: bool) -> Verdict:
        key = (m.name, compiled, s)
        if key not in self.ss:
            p = self.target(m) if compiled else m.source
            self.ss[key] = check_ss(m.whole(p), s, self.omega, self.fuel, self.opts)
        return self.ss[key]


def _fail(prop: str, s, m: Member, v: Verdict, **detail) -> Verdict:
    return Verdict(prop, False, show_set(s), v.index, v.event, v.stack, m.name, detail)


def _members_ss_under(cache: _Cache, corpus, y: frozenset):
    """Corpus members whose source is SS with no speculation and under ``y``."""
    for m in corpus:
        if cache.check(m, frozenset(), False).safe and cache.check(m, y, False).safe:
            yield m


def independence_empirical(d, y: Iterable[str], corpus: Iterable[Member], *,
                           omega: int = DEFAULT_OMEGA, fuel: int = DEFAULT_FUEL,
                           opts: Options = DEFAULT_OPTIONS, _cache=None) -> Verdict:
    d = _desc(d)
    y = check_combinable(y)
    cache = _cache or _Cache(d, omega, fuel, opts)
    n = 0
    for m in _members_ss_under(cache, corpus, y):
        n += 1
        v = cache.check(m, y, True)
        if not v.safe:
            return _fail("Independence", y, m, v, checked=n)
    return Verdict("Independence", True, show_set(y), detail={"checked": n})


def crssp_empirical(d, x: Iterable[str], y: Iterable[str], corpus: Iterable[Member], *,
                    omega: int = DEFAULT_OMEGA, fuel: int = DEFAULT_FUEL,
                    opts: Options = DEFAULT_OPTIONS, _cache=None) -> Verdict:
    """Members SS under ``y`` must compile to members SS under ``x`` ∪ ``y``; ``x`` is the base."""
    d = _desc(d)
    if frozenset(x) != {d.base}:
        raise ValueError(f"x must be the base source {{{d.base}}} of {d.id}")
    y = check_combinable(y)
    s = check_combinable(y | {d.base})
    cache = _cache or _Cache(d, omega, fuel, opts)
    n = 0
    for m in _members_ss_under(cache, corpus, y):
        n += 1
        v = cache.check(m, s, True)
        if not v.safe:
            return _fail("CRSSP", s, m, v, checked=n)
    return Verdict("CRSSP", True, show_set(s), detail={"checked": n})


def trapped_run(w, base: str, omega: int = DEFAULT_OMEGA, fuel: int = DEFAULT_FUEL,
                opts: Options = DEFAULT_OPTIONS) -> Verdict:
    """Speculation from ``base`` produces nothing but its own markers."""
    depth = 0
    for k, ev in enumerate(SpecMachine(w, {base}, omega, opts).events(fuel, MAX_ITERATIONS)):
        if ev.kind == "start":
            depth += 1
        elif ev.kind == "rollback":
            depth -= 1
        elif depth:
            return Verdict("Trapped", False, base, k, ev)
    return Verdict("Trapped", True, base)


def trapped_speculation(d, p: Unit, a: Optional[Unit], omega: int = DEFAULT_OMEGA,
                        fuel: int = DEFAULT_FUEL, opts: Options = DEFAULT_OPTIONS,
                        ext_vassign: bool = False) -> Verdict:
    d = _desc(d)
    return trapped_run(link(a, compile(d, p, ext_vassign=ext_vassign)), d.base, omega, fuel, opts)


def trapped_corpus(d, corpus: Iterable[Member], *, omega: int = DEFAULT_OMEGA,
                   fuel: int = DEFAULT_FUEL, opts: Options = DEFAULT_OPTIONS,
                   _cache=None) -> Verdict:
    d = _desc(d)
    cache = _cache or _Cache(d, omega, fuel, opts)
    n = 0
    for m in corpus:
        n += 1
        v = trapped_run(m.whole(cache.target(m)), d.base, omega, fuel, opts)
        if not v.safe:
            v.attacker = m.name
            v.detail = {"checked": n}
            return v
    return Verdict("Trapped", True, d.base, detail={"checked": n})


def safe_nesting(w, s: Iterable[str], omega: int = DEFAULT_OMEGA, fuel: int = DEFAULT_FUEL,
                 opts: Options = DEFAULT_OPTIONS) -> Verdict:
    """Every event inside a transaction nested in one of a different source is safe."""
    s = check_combinable(s)
    if len(s) < 2:
        raise NotApplicable("safe nesting needs at least two speculation sources")
    stack: list[tuple] = []
    for k, ev in enumerate(SpecMachine(w, s, omega, opts).events(fuel, MAX_ITERATIONS)):
        if ev.kind == "start":
            stack.append(tuple(ev.payload))
        elif ev.kind == "rollback":
            stack.pop()
        elif ev.taint is U and len({sem for sem, _ in stack}) > 1:
            return Verdict("SafeNesting", False, show_set(s), k, ev, tuple(stack))
    return Verdict("SafeNesting", True, show_set(s))


def safe_nesting_corpus(d, s: Iterable[str], corpus: Iterable[Member], *,
                        omega: int = DEFAULT_OMEGA, fuel: int = DEFAULT_FUEL,
                        opts: Options = DEFAULT_OPTIONS, _cache=None) -> Verdict:
    """Checked on compiled members whose source is SS under the extension ``s - {base}``."""
    d = _desc(d)
    s = check_combinable(s)
    if len(s) < 2:
        raise NotApplicable("safe nesting needs at least two speculation sources")
    cache = _cache or _Cache(d, omega, fuel, opts)
    n = 0
    for m in _members_ss_under(cache, corpus, s - {d.base}):
        n += 1
        v = safe_nesting(m.whole(cache.target(m)), s, omega, fuel, opts)
        if not v.safe:
            v.attacker = m.name
            v.detail = {"checked": n}
            return v
    return Verdict("SafeNesting", True, show_set(s), detail={"checked": n})


# --------------------------------------------------------------------------
# the lattice report


@dataclass
class LiftCell:
    sources: frozenset
    si: Verdict                              # decided
    independence: Optional[Verdict]          # observed, only when SI fails
    nesting: Optional[Verdict]               # observed, only when not trapped
    crssp: Verdict                           # observed
    trapped: bool

    @property
    def independent(self) -> bool:
        return self.si.safe or bool(self.independence and self.independence.safe)

    @property
    def nested_ok(self) -> bool:
        return self.trapped or bool(self.nesting and self.nesting.safe)

    @property
    def holds(self) -> bool:
        return self.independent and self.nested_ok and self.crssp.safe

    def as_dict(self) -> dict:
        def opt(v):
            return None if v is None else v.as_dict()
        return {"sources": show_set(self.sources), "lifts": self.holds,
                "decided": {"si": self.si.safe},
                "observed": {"independence": opt(self.independence), "trapped": self.trapped,
                             "safe_nesting": opt(self.nesting), "crssp": self.crssp.as_dict()}}


@dataclass
class LiftReport:
    pass_id: str
    base: str
    omega: int
    members: int
    trapped: Verdict
    cells: list[LiftCell] = field(default_factory=list)

    @property
    def lifted(self) -> list[frozenset]:
        return [c.sources for c in self.cells if c.holds]

    @property
    def strongest(self) -> list[frozenset]:
        ok = self.lifted
        return [s for s in ok if not any(s < t for t in ok)]

    def cell(self, s: Iterable[str]) -> LiftCell:
        s = frozenset(s)
        for c in self.cells:
            if c.sources == s:
                return c
        raise KeyError(show_set(s))

    def as_dict(self) -> dict:
        return {"pass": self.pass_id, "base": self.base, "omega": self.omega,
                "members": self.members, "trapped": self.trapped.as_dict(),
                "strongest": [show_set(s) for s in self.strongest],
                "cells": [c.as_dict() for c in self.cells]}


def lift_report(d, corpus: Optional[list[Member]] = None, *, omega: int = DEFAULT_OMEGA,
                fuel: int = DEFAULT_FUEL, opts: Options = DEFAULT_OPTIONS) -> LiftReport:
    d = _desc(d)
    corpus = lift_corpus(d) if corpus is None else list(corpus)
    cache = _Cache(d, omega, fuel, opts)
    kw = dict(omega=omega, fuel=fuel, opts=opts, _cache=cache)
    trapped = trapped_corpus(d, corpus, **kw)
    rep = LiftReport(d.id, d.base, omega, len(corpus), trapped)
    for s in supersets({d.base}):
        y = s - {d.base}
        si = syntactic_independence(d, y)
        ind = None if si.safe else independence_empirical(d, y, corpus, **kw)
        nest = None
        if not trapped.safe:
            nest = (safe_nesting_corpus(d, s, corpus, **kw) if len(s) > 1
                    else Verdict("SafeNesting", True, show_set(s), detail={"vacuous": True}))
        rep.cells.append(LiftCell(s, si, ind, nest, crssp_empirical(d, {d.base}, y, corpus, **kw),
                                  trapped.safe))
    return rep


def sort_sets(sets: Iterable[frozenset]) -> list[frozenset]:
    order = {x: k for k, x in enumerate(SEMS)}
    return sorted(sets, key=lambda s: (len(s), [order[x] for x in sorted(s, key=order.get)]))

import pytest

from artifact.errors import IncompatibleSources
from artifact.lang import link
from artifact.machine import run_ns, show_trace
from artifact.spec import (
    SpecMachine, parse_sources, run_spec, show_set, spec_stacks, speculation_instrs,
)

from conftest import unit, whole

LOOP = """
component
fun main:
  l0: c <- 1
  l1: beqz c, l3
  l2: ret
  l3: load x, 0
  l4: jmp l3
"""

NESTED = """
component
fun main:
  l0: c <- 1
  l1: beqz c, l3
  l2: ret
  l3: store c, 0
  l4: load x, 0
  l5: ret
"""


def test_parse_sources():
    assert parse_sources("B, J") == {"B", "J"}
    assert parse_sources("NS") == frozenset()
    assert parse_sources(None) == frozenset()
    with pytest.raises(ValueError):
        parse_sources("B,Q")
    with pytest.raises(IncompatibleSources):
        parse_sources("R,SLS")
    assert show_set({"SLS", "B"}) == "B+SLS"
    assert show_set(()) == "NS"


def test_speculation_instrs():
    assert speculation_instrs({"R"}) == {"call", "ret"}
    assert speculation_instrs({"B", "SLS"}) == {"beqz", "ret"}


@pytest.mark.parametrize("omega, loads", [(1, 1), (2, 1), (3, 2), (6, 3)])
def test_window_bounds_speculative_steps(omega, loads):
    t = run_spec(link(None, unit(LOOP)), {"B"}, omega)
    inside = t[t.index(next(e for e in t if e.kind == "start")) + 1:
               t.index(next(e for e in t if e.kind == "rollback"))]
    assert len(inside) == omega
    assert sum(e.kind == "load" for e in inside) == loads


def test_barrier_ends_speculation():
    p = unit(LOOP.replace("l3: load x, 0", "l3: spbarr\n  l3b: load x, 0"))
    assert show_trace(run_spec(link(None, p), {"B"}, 6)) == (
        "pc(l2)^S start(B,0)^S rollback(B,0)^S terminate()^S")


def test_nested_transactions_and_stacks():
    t = run_spec(link(None, unit(NESTED)), {"B", "S"}, 6)
    assert show_trace(t) == (
        "pc(l2)^S start(B,0)^S store(0)^S start(S,0)^S load(0)^S rollback(S,0)^S "
        "load(0)^S rollback(B,0)^S terminate()^S")
    st = spec_stacks(t)
    assert st[4] == (("B", 0), ("S", 0))
    assert st[-1] == ()


def test_empty_source_set_matches_ns():
    for name in ("gadget_pht", "rsb", "sls", "jmp_hijack"):
        w = whole(name, "prime")
        assert run_spec(w, (), 20) == run_ns(w)


@pytest.mark.parametrize("name, src", [("gadget_pht", "B"), ("gadget_stl", "S"), ("rsb", "R"),
                                       ("sls", "SLS"), ("jmp_hijack", "J")])
def test_each_source_opens_its_transactions(name, src):
    t = run_spec(whole(name, "prime"), {src}, 20)
    assert {e.payload[0] for e in t if e.kind == "start"} == {src}


def test_speculative_u_taint_reaches_events():
    t = run_spec(whole("gadget_pht", "prime"), {"B"}, 20)
    assert [str(e) for e in t if e.taint.name == "U"] == ["load(-5)^U", "load(42)^U"]


def test_events_generator_matches_run():
    w = whole("slh_j")
    m = SpecMachine(w, {"B", "J"}, 12)
    assert list(m.events()) == run_spec(w, {"B", "J"}, 12)

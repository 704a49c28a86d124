import random

import pytest

from artifact.compose import (
    check_confluence, check_projection_preservation, check_rollback_transparency,
    combinable_sets, first_divergence, leakage_leq, nonspec_projection, renumber,
    source_projection, spec_projection, supersets,
)
from artifact.errors import MalformedBrackets
from artifact.machine import Event, rollback, start
from artifact.spec import run_spec

from conftest import whole

A, B = Event("load", (1,)), Event("load", (2,))
T = [A, start("B", 0), B, start("S", 0), A, rollback("S", 0), rollback("B", 0),
     start("S", 1), B, rollback("S", 1), B]


def test_projections():
    assert nonspec_projection(T) == [A, B]
    assert spec_projection(T) == T[1:-1]
    assert source_projection(T, "S") == [A, start("B", 0), B, rollback("B", 0), B]
    assert source_projection(T, "B") == [A, start("S", 1), B, rollback("S", 1), B]


@pytest.mark.parametrize("bad", [
    [start("B", 0), A],
    [rollback("B", 0)],
    [start("B", 0), start("S", 0), rollback("B", 0), rollback("S", 0)],
])
def test_malformed_brackets(bad):
    with pytest.raises(MalformedBrackets):
        nonspec_projection(bad)


def test_renumber():
    t = [start("B", 7), rollback("B", 7), start("S", 3), rollback("S", 3), start("B", 9),
         rollback("B", 9)]
    assert renumber(t) == [start("B", 0), rollback("B", 0), start("S", 0), rollback("S", 0),
                           start("B", 1), rollback("B", 1)]


def test_lattice():
    sets = combinable_sets()
    assert len(sets) == 23 and frozenset() not in sets
    assert len(combinable_sets(include_empty=True)) == 24
    assert leakage_leq({"B"}, {"B", "J"}) and not leakage_leq({"B", "J"}, {"B"})
    assert all("B" in s for s in supersets({"B"}))
    assert len(supersets({"B"})) == 12


def test_first_divergence():
    assert first_divergence([A, B], [A, B]) is None
    assert first_divergence([A, B], [A, A]) == 1
    assert first_divergence([A], [A, B]) == 1


@pytest.mark.parametrize("name", ["gadget_pht", "gadget_stl", "rsb", "sls", "slh_j"])
def test_wfc_on_fixtures(name):
    w = whole(name, "prime")
    for x, y in [({"B"}, {"S"}), ({"B", "J"}, {"R"}), ({"S"}, {"SLS"})]:
        assert check_projection_preservation(w, x, y, omega=12).ok
    assert check_confluence(w, {"B", "J", "S", "R"}, 3, omega=12).ok
    assert check_rollback_transparency(w, {"B", "J", "S", "SLS"}, omega=12).ok


def test_projection_preservation_rejects_overlap():
    with pytest.raises(ValueError):
        check_projection_preservation(whole("gadget_pht"), {"B"}, {"B", "S"})


def test_confluence_detects_nondeterministic_runner():
    rng = random.Random(0)

    def flaky(w, s, omega, fuel, opts):
        t = run_spec(w, s, omega, fuel, opts)
        return t if rng.random() < 0.5 else t[:-1]
    r = check_confluence(whole("gadget_pht", "prime"), {"B"}, 8, runner=flaky)
    assert not r.ok and r.mismatches


def test_projection_detects_corrupted_trace():
    w = whole("gadget_stl")
    good = {}

    def run(s):
        t = run_spec(w, s, 12)
        if s == frozenset({"B", "S"}):
            t = [e for e in t if e.kind != "rollback"]
        return good.setdefault(frozenset(s), t)
    with pytest.raises(MalformedBrackets):
        check_projection_preservation(w, {"B"}, {"S"}, omega=12, run=run)

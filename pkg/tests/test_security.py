import warnings

import pytest

from artifact.corpus import attacker_corpus, load_fixture
from artifact.lang import link
from artifact.machine import Options
from artifact.passes import compile
from artifact.security import (
    check_robust, check_sni, check_ss, check_ss_implies_sni, gen_low_equiv, safe_run,
    ss_of_trace, variant_pairs, with_secrets,
)
from artifact.spec import run_spec
from artifact.taint import U

from conftest import prime, whole


def test_ss_streaming_agrees_with_full_trace():
    for name in ("gadget_pht", "gadget_stl", "rsb", "sls", "jmp_hijack", "safe_loop"):
        w = whole(name, "prime")
        for s in ({"B"}, {"S"}, {"R"}, {"SLS"}, {"J"}, {"B", "S"}):
            full = ss_of_trace(run_spec(w, s, 12), "")
            fast = check_ss(w, s, 12)
            assert (full.safe, full.index, full.event, full.stack) == \
                   (fast.safe, fast.index, fast.event, fast.stack), (name, s)


def test_safe_run():
    assert safe_run(whole("gadget_pht", "prime"), {"B"}) is None
    assert safe_run(whole("gadget_pht", "prime"), ()) is not None


def test_low_equivalence_only_changes_private_cells(pht):
    q = gen_low_equiv(pht, 3)
    assert q.functions == pht.functions
    a, b = pht.mem_dict(), q.mem_dict()
    assert set(a) == set(b)
    assert all(b[k][1] is U for k in b)
    assert with_secrets(pht, {-5: 1}).mem_dict()[-5] == (1, U)
    assert list(variant_pairs(pht, 3, 1)) == list(variant_pairs(pht, 3, 1))


def test_sni_finds_secret_dependence(pht):
    v = check_sni(pht, prime(pht), {"B"}, pairs=10)
    assert not v.safe and v.detail["left"] != v.detail["right"]
    assert check_sni(pht, prime(pht), (), pairs=10).safe
    pair = [(with_secrets(pht, {-5: 42}), with_secrets(pht, {-5: 7}))]
    v = check_sni(pht, prime(pht), {"B"}, variants=pair)
    assert not v.safe and v.index == 6


def test_robust_ss_reports_attacker(pht):
    v = check_robust("SS", pht, attacker_corpus(pht), {"B"})
    assert not v.safe and v.prop == "RSS" and v.attacker == "prime"
    assert check_robust("SS", compile("fence_b", pht), attacker_corpus(pht), {"B"}).safe
    assert check_robust("SNI", compile("uslh_b", pht), attacker_corpus(pht)[:3], {"B"}, pairs=5).safe
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        v = check_robust("SS", pht, [], {"B"})
    assert v.safe and v.detail["vacuous"] and caught
    with pytest.raises(ValueError):
        check_robust("XX", pht, attacker_corpus(pht), {"B"})


def test_ss_implies_sni_and_negative_control(pht):
    r = check_ss_implies_sni(pht, prime(pht), {"B"}, 20)
    assert r.ok and r.eligible == 0
    r = check_ss_implies_sni(pht, prime(pht), (), 20)
    assert r.ok and r.eligible == 20
    r = check_ss_implies_sni(pht, prime(pht), {"B"}, 20, opts=Options(taint_bug=True))
    assert r.eligible == 20 and len(r.counterexamples) == 20


def test_verdict_dict():
    v = check_ss(link(prime(load_fixture("gadget_pht")), load_fixture("gadget_pht")), {"B"})
    d = v.as_dict()
    assert d["verdict"] == "fail" and d["event"] == "load(-5)^U" and d["spec_stack"] == [["B", 0]]

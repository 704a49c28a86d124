from hypothesis import given, settings, strategies as st

from artifact.compose import nonspec_projection, renumber, source_projection, spec_projection
from artifact.corpus import attacker_corpus, load_fixture
from artifact.lang import Bin, Lit, Reg, link, parse, pretty, show_expr
from artifact.machine import Event, eval_expr, rollback, start
from artifact.security import gen_low_equiv
from artifact.spec import SEMS, run_spec
from artifact.taint import S, U, join

regs = st.sampled_from(["a", "b", "c"])
ops = st.sampled_from(["+", "-", "*", "<", "==", "!=", "<=", "&&", "||"])
exprs = st.recursive(
    st.one_of(st.integers(0, 50).map(Lit), regs.map(Reg)),
    lambda sub: st.builds(Bin, ops, sub, sub), max_leaves=8)


@given(exprs)
def test_expression_pretty_parse_round_trip(e):
    text = f"component\nfun main:\n  l0: x <- {show_expr(e)}\n  l1: ret\n"
    p = parse(text)
    assert p.function("main").code[0][1].expr == e
    assert parse(pretty(p)) == p


@given(exprs, st.dictionaries(regs, st.tuples(st.integers(-20, 20), st.sampled_from([S, U]))))
def test_eval_taint_is_join_of_registers(e, env):
    from artifact.lang import expr_regs
    _, t = eval_expr(env, e)
    assert t == join(S, *[env.get(r, (0, S))[1] for r in expr_regs(e)])


def _well_bracketed():
    leaf = st.builds(lambda n: [Event("load", (n,))], st.integers(0, 9))
    return st.recursive(
        st.lists(leaf, max_size=3).map(lambda xs: sum(xs, [])),
        lambda sub: st.tuples(st.sampled_from(SEMS), st.integers(0, 5), sub, sub).map(
            lambda t: t[3] + [start(t[0], t[1])] + t[2] + [rollback(t[0], t[1])]),
        max_leaves=10)


@given(_well_bracketed())
def test_projection_laws(t):
    ns, sp = nonspec_projection(t), spec_projection(t)
    assert len(ns) + len(sp) == len(t)
    assert nonspec_projection(ns) == ns
    for sem in SEMS:
        p = source_projection(t, sem)
        assert not any(e.is_marker and e.payload[0] == sem for e in p)
        assert nonspec_projection(p) == ns
    assert renumber(renumber(t)) == renumber(t)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32), st.sets(st.sampled_from(["B", "J", "S"])))
def test_runs_deterministic_and_ns_invariant_under_low_equivalence(seed, s):
    p = load_fixture("gadget_pht")
    a = dict(attacker_corpus(p))["call_all"]
    q = gen_low_equiv(p, seed)
    t1, t2 = run_spec(link(a, q), s, 12), run_spec(link(a, q), s, 12)
    assert t1 == t2
    assert nonspec_projection(t1) == nonspec_projection(run_spec(link(a, p), s, 12))

import pytest

from artifact.corpus import attacker_corpus, load_fixture
from artifact.lang import link, parse


def unit(text: str, **kw):
    return parse(text.strip() + "\n", **kw)


def idle(p):
    return dict(attacker_corpus(p))["idle"]


def prime(p):
    return dict(attacker_corpus(p))["prime"]


def whole(name: str, attacker: str = "idle"):
    p = load_fixture(name)
    return link(dict(attacker_corpus(p))[attacker], p)


@pytest.fixture
def pht():
    return load_fixture("gadget_pht")

import random

import pytest
from hypothesis import settings

from tradechain import anoncreds
from tradechain.crypto_math import TEST_PROFILE
from tradechain.network import Network
from tradechain.scenario import Runner, demo_scenario

settings.register_profile("tradechain", deadline=None, print_blob=True)
settings.load_profile("tradechain")


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture(scope="session")
def trader_schema():
    return anoncreds.create_schema("trader", "1.0", ["name", "location", "reputation"])


@pytest.fixture
def cred_setup(trader_schema):
    """A test-profile credential definition shared by the anoncreds tests."""
    r = random.Random(99)
    cred_def, secret = anoncreds.create_cred_def(trader_schema, anoncreds.DEFAULT_EXTRAS, TEST_PROFILE,
                                                 "did:tc:issuer", r)
    return cred_def, secret


def run_demo(seed=None):
    scenario = demo_scenario()
    net = Network(seed=scenario.seed if seed is None else seed, profile=TEST_PROFILE)
    Runner(net).run(scenario.steps)
    return net


@pytest.fixture(scope="module")
def demo_net():
    return run_demo()


def make_world(seed=1, traders=("alice", "bob", "carol"), register=True, reputation=80, **net_kw):
    """Bootstrapped network with a government, an SCCA and credentialled traders."""
    net = Network(seed=seed, profile=TEST_PROFILE, **net_kw)
    net.add_actor("gov", "government")
    net.add_actor("scca", "issuer")
    net.add_actor("auditor", "auditor")
    for t in traders:
        net.add_actor(t, "trader")
    net.bootstrap()
    for name in ("gov", "scca", "auditor", *traders):
        net.onboard(name)
    net.publish_schema("gov", "trader_license", "1.0", ["name", "reputation", "country"])
    net.publish_cred_def("scca", "trader_license")
    for t in traders:
        net.issue_credential("scca", t, {"name": t, "reputation": reputation, "country": "FR",
                                         "issuer_info": "scca", "trade_type": "grain"})
        if register:
            net.register_trader(t, "scca", "reputation", 50)
    return net


@pytest.fixture
def world():
    return make_world()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

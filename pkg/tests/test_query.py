import dataclasses

import pytest
from hypothesis import assume, given, settings, strategies as st

from tradechain import canonical
from tradechain.cpabe import abe_decrypt, parse_policy
from tradechain.errors import (
    EncodingFailure,
    InvalidParams,
    InvalidTimeRange,
    ParamMismatch,
    TokenBadSignature,
    TokenExpired,
    TokenPolicyNotSatisfied,
    TokenRejected,
    UnauthorizedCaller,
    UsesExhausted,
    WrongRequester,
)
from tradechain.query import (
    ALIAS_PREFIX,
    FIELD_UNIVERSE,
    AccessToken,
    QueryParams,
    _require_qsc,
    find_did_substrings,
    params,
    sign_request,
    token_hash,
)
from tradechain.tml import TAG_EXECUTED, TAG_GENERATED, TX_CR, TX_QUERY, TX_TR

from conftest import make_world

GRAIN = ("grain", 100, 25)


@pytest.fixture(scope="module")
def traded():
    """alice creates three commodities and sells each to bob."""
    net = make_world(seed=7)
    for i in range(3):
        net.create("alice", f"CID-{i}", "grain", 10 * (i + 1), 5)
        net.trade("alice", "bob", f"CID-{i}", "grain", 10 * (i + 1), 5)
    return net


def run(net, requester, token, now=None):
    agent = net.actor(requester)
    return net.qsc.execute_query(token, agent.verinym, sign_request(agent, token), now=now)


def query_logs(net):
    return [e.payload_value() for e in net.tml.ledger.entries() if e.tx_type == TX_QUERY]


def oracle(net, owner):
    """Brute-force scan: every TX_cr/TX_tr touching a DID in ``owner``'s wallet."""
    mine = {d.did for d in net.actor(owner).wallet.dids()}
    out = []
    for e in net.tml.ledger.entries():
        if e.tx_type not in (TX_CR, TX_TR):
            continue
        p = canonical.decode(e.payload)
        if mine & {p.get("DID_v"), p.get("DID_p_SB"), p.get("DID_p_BS")}:
            out.append(p["CID"])
    return out


def test_issuance_logs_generated(world):
    world.create("alice", "CID-1", *GRAIN)
    tok = world.issue_token("alice", "auditor", "t", params("CID"))
    logs = query_logs(world)
    assert logs == [{"requester": world.actor("auditor").verinym, "token_hash": token_hash(tok),
                     "tag": TAG_GENERATED}]


def test_time_range_must_be_ordered(world):
    with pytest.raises(InvalidTimeRange):
        world.issue_token("alice", "auditor", "t", params("CID"), time_range=(10, 5))
    assert query_logs(world) == []


def test_token_hides_handle_and_grant(world):
    world.create("alice", "CID-1", *GRAIN)
    tok = world.issue_token("alice", "auditor", "t", params("CID", "unit_price", "commodity_type"),
                            params("CID"))
    blob = tok.to_bytes()
    inner = canonical.decode(abe_decrypt(world.qsc.abe_key, tok.ct))
    assert inner["R"].encode() not in blob
    assert b"unit_price" not in blob and b"commodity_type" not in blob
    assert sorted(inner["Param_i"]["fields"]) == ["CID", "commodity_type", "unit_price"]
    assert AccessToken.unarmor(tok.armor()) == tok


@pytest.mark.parametrize("field, value", [
    ("token_id", "tok-other"),
    ("param_j", params("CID", "quantity")),
    ("time", (0, 3)),
    ("expiry", 10 ** 9),
    ("max_uses", 50),
    ("requester", "did:tc:someone"),
    ("issuer_did", "did:tc:someone"),
])
def test_mutated_token_is_rejected(world, field, value):
    world.create("alice", "CID-1", *GRAIN)
    tok = world.issue_token("alice", "auditor", "t", params("CID", "quantity"), params("CID"))
    forged = dataclasses.replace(tok, **{field: value})
    with pytest.raises(TokenRejected):
        run(world, "auditor", forged)
    assert world.tml.executed_count(token_hash(tok)) == 0


def test_mutated_ciphertext_is_rejected(world):
    tok = world.issue_token("alice", "auditor", "t", params("CID"))
    for i in range(0, len(tok.ct), max(1, len(tok.ct) // 16)):
        ct = bytearray(tok.ct)
        ct[i] ^= 0x01
        with pytest.raises(TokenBadSignature):
            run(world, "auditor", dataclasses.replace(tok, ct=bytes(ct)))


def test_appending_a_field_breaks_the_signature(world):
    tok = world.issue_token("alice", "auditor", "t", params("CID", "quantity", "unit_price"), params("CID"))
    for extra in ("quantity", "unit_price"):
        grown = dataclasses.replace(tok, param_j=params("CID", extra))
        with pytest.raises(TokenBadSignature):
            run(world, "auditor", grown)


def test_param_j_beyond_param_i(world):
    tok = world.issue_token("alice", "auditor", "t", params("CID"), params("CID", "unit_price"))
    with pytest.raises(ParamMismatch):
        run(world, "auditor", tok)


def test_use_limit(world):
    world.create("alice", "CID-1", *GRAIN)
    tok = world.issue_token("alice", "auditor", "t", params("CID"), uses=3)
    for _ in range(3):
        run(world, "auditor", tok)
    with pytest.raises(UsesExhausted):
        run(world, "auditor", tok)
    assert world.tml.executed_count(token_hash(tok)) == 3


def test_expiry(world):
    tok = world.issue_token("alice", "auditor", "t", params("CID"), expiry_in=50)
    with pytest.raises(TokenExpired):
        run(world, "auditor", tok, now=tok.expiry + 1)
    run(world, "auditor", tok, now=tok.expiry)


def test_wrong_requester(world):
    tok = world.issue_token("alice", "auditor", "t", params("CID"))
    with pytest.raises(WrongRequester):
        run(world, "bob", tok)
    # the right DID with someone else's signature
    bob = world.actor("bob")
    with pytest.raises(WrongRequester):
        world.qsc.execute_query(tok, tok.requester, sign_request(bob, tok))


def test_projection_matches_oracle(traded):
    tok = traded.issue_token("alice", "auditor", "proj", params("CID", "quantity"))
    result = run(traded, "auditor", tok)
    expected = oracle(traded, "alice")
    assert [r.fields["CID"] for r in result.records] == expected
    assert len(expected) == 6  # three creates, three sales
    for rec in result.records:
        assert set(rec.fields) == {"CID", "quantity"}
        assert all(p.startswith(ALIAS_PREFIX) for p in rec.parties)
    quantities = {r.fields["CID"]: r.fields["quantity"] for r in result.records}
    assert quantities == {"CID-0": 10, "CID-1": 20, "CID-2": 30}
    assert find_did_substrings(result.to_bytes(), traded.all_dids()) == []


def test_cid_and_record_limits(traded):
    tok = traded.issue_token("alice", "auditor", "lim", params("CID", cid="CID-1"))
    assert [r.fields["CID"] for r in run(traded, "auditor", tok).records] == ["CID-1", "CID-1"]
    tok = traded.issue_token("alice", "auditor", "cap", params("CID", max_records=2),
                             params("CID", max_records=1))
    assert run(traded, "auditor", tok).count == 1


def test_buyer_side_view(traded):
    tok = traded.issue_token("bob", "auditor", "bob", params("CID", "counterparty_role"))
    result = run(traded, "auditor", tok)
    assert result.count == len(oracle(traded, "bob")) == 3
    assert {r.fields["counterparty_role"] for r in result.records} == {"seller"}


def test_empty_time_range_is_still_logged(traded):
    far = traded.clock.peek() + 10 ** 6
    tok = traded.issue_token("alice", "auditor", "empty", params("CID"), time_range=(far, far + 1),
                             expiry_in=10 ** 7)
    before = len(query_logs(traded))
    result = run(traded, "auditor", tok)
    assert result.count == 0
    assert query_logs(traded)[before:] == [{"requester": tok.requester, "token_hash": token_hash(tok),
                                            "tag": TAG_EXECUTED}]


def test_aliases_are_fresh_per_query(traded):
    tok = traded.issue_token("alice", "auditor", "fresh", params("CID"), uses=2)
    a, b = run(traded, "auditor", tok), run(traded, "auditor", tok)
    assert [r.fields for r in a.records] == [r.fields for r in b.records]
    assert not {p for r in a.records for p in r.parties} & {p for r in b.records for p in r.parties}
    # within one answer, the same DID keeps one alias: all three creates use alice's DID_v
    creates = [r for r in a.records if len(r.parties) == 1]
    assert len(creates) == 3 and len({r.parties[0] for r in creates}) == 1


def test_token_hash_is_stable_and_logged(world):
    tok = world.issue_token("alice", "auditor", "t", params("CID"))
    again = AccessToken.from_bytes(tok.to_bytes())
    assert token_hash(again) == token_hash(tok)
    result = run(world, "auditor", tok)
    entry = world.tml.ledger[result.log_seq]
    assert entry.payload_value()["token_hash"] == token_hash(tok) == result.token_hash
    # the signature field is excluded from the hash
    assert token_hash(dataclasses.replace(tok, token_sig=b"x")) == token_hash(tok)


def test_requester_cannot_bypass_the_qsc(traded):
    with pytest.raises(UnauthorizedCaller):
        traded.tml.scan(None)
    with pytest.raises(UnauthorizedCaller):
        traded.tml.scan(b"\x00" * 32, tx_type=TX_TR)
    tok = traded.issue_token("alice", "auditor", "bypass", params("CID"))
    R = canonical.decode(abe_decrypt(traded.qsc.abe_key, tok.ct))["R"]
    with pytest.raises(UnauthorizedCaller):
        traded.registry.resolve_endpoint(R, None)


@pytest.mark.parametrize("policy, ok", [
    ("and(role:qsc, deploy:tml)", True),
    ("role:qsc", True),
    ("role:auditor", False),
    ("or(role:qsc, role:auditor)", False),
    ("and(deploy:tml, role:auditor)", False),
])
def test_policy_must_require_qsc(policy, ok):
    if ok:
        _require_qsc(parse_policy(policy))
    else:
        with pytest.raises(InvalidParams):
            _require_qsc(parse_policy(policy))


def test_policy_the_qsc_cannot_open(world):
    tok = world.issue_token("alice", "auditor", "t", params("CID"), policy="and(role:qsc, deploy:other)")
    with pytest.raises(TokenPolicyNotSatisfied):
        run(world, "auditor", tok)


def test_bad_inputs(world):
    with pytest.raises(InvalidParams):
        params("CID", "price")
    with pytest.raises(InvalidParams):
        params("CID", max_records=-1)
    with pytest.raises(InvalidParams):
        world.issue_token("alice", "auditor", "t", params("CID"), uses=0)
    with pytest.raises(EncodingFailure):
        AccessToken.unarmor("not base64!")


fields = st.frozensets(st.sampled_from(FIELD_UNIVERSE))


@settings(max_examples=200)
@given(fields, fields, fields)
def test_within_is_subset_order(a, b, c):
    pa, pb, pc = QueryParams(a), QueryParams(b), QueryParams(c)
    assert pa.within(pb) == (a <= b)
    if pa.within(pb) and pb.within(pc):
        assert pa.within(pc)


@settings(max_examples=15)
@given(grant=fields.filter(bool), ask=fields.filter(bool))
def test_returned_fields_are_the_intersection(traded, grant, ask):
    assume(ask <= grant)
    tok = traded.issue_token("alice", "auditor", f"h{len(traded.tokens)}", QueryParams(grant), QueryParams(ask))
    for rec in run(traded, "auditor", tok).records:
        assert set(rec.fields) == set(ask)

import dataclasses
import hashlib
import random

import pytest
from hypothesis import given, settings, strategies as st

from tradechain import anoncreds, canonical
from tradechain.anoncreds import (
    DEFAULT_EXTRAS, MASTER_SECRET, REVOCATION_INDEX, MasterSecret, Predicate, ProofRequest,
    create_cred_def, create_cred_request, create_schema, finalize_credential, generate_proof,
    issue_credential, signature_holds, verify_cred_request, verify_proof,
)
from tradechain.crypto_math import TEST_PROFILE
from tradechain.errors import DuplicateAttribute, InvalidArgument, InvalidBlindingProof, NonceReused, \
    PredicateUnsatisfied


def slow_pow(base, exp, mod):
    """Square-and-multiply on plain ints, independent of the library's powmod."""
    result, base = 1, base % mod
    while exp:
        if exp & 1:
            result = result * base % mod
        base = base * base % mod
        exp >>= 1
    return result


def oracle_encode(value, n):
    if isinstance(value, int):
        return value
    return int.from_bytes(hashlib.sha256(value.encode()).digest(), "big") % n


def cl_relation_holds(cred_def, cred, m1):
    pk = cred_def.public_key
    n = pk.n
    rhs = slow_pow(cred.A, cred.e, n) * slow_pow(pk.S, cred.v, n) % n
    rhs = rhs * slow_pow(pk.R[0], m1, n) % n
    for i, name in enumerate(cred_def.attribute_names[1:], 1):
        rhs = rhs * slow_pow(pk.R[i], oracle_encode(cred.raw_values[name], n), n) % n
    return rhs == pk.Z


def values(name="Alice", location="Lyon", reputation=80, index=1):
    return {"name": name, "location": location, "reputation": reputation,
            "issuer_info": "SCCA", "trade_type": "grain", REVOCATION_INDEX: index}


def issue(cred_def, secret, vals, rng, did_p="did:tc:holder", nonce_rng=None):
    ms = MasterSecret.generate(TEST_PROFILE, rng)
    nonce = secret.offer_nonce(nonce_rng or rng)
    req, blinding = create_cred_request(cred_def, ms, nonce, did_p, rng)
    issued = issue_credential(cred_def, secret, req, vals, rng)
    return finalize_credential(cred_def, issued, blinding, ms), ms


def request(revealed=(), predicates=(), cred_def=None, nonce=7):
    return ProofRequest(tuple(revealed), tuple(predicates), cred_def.id if cred_def else None, nonce)


# -- schema / cred def ----------------------------------------------------------

def test_schema_constructor(trader_schema):
    assert trader_schema.attribute_names == ("name", "location", "reputation")
    again = create_schema("trader", "1.0", ["name", "location", "reputation"])
    assert canonical.encode(again.to_record()) == canonical.encode(trader_schema.to_record())
    assert again.id == "schema:" + hashlib.sha256(canonical.encode(again.to_record())).hexdigest()


def test_schema_rejects_duplicates_and_empties():
    with pytest.raises(DuplicateAttribute):
        create_schema("trader", "1.0", ["name", "name"])
    with pytest.raises(InvalidArgument):
        create_schema("trader", "1.0", [])
    with pytest.raises(InvalidArgument):
        create_schema("trader", "1.0", ["name", ""])


def test_cred_def_bases(cred_setup, trader_schema, rng):
    cred_def, _ = cred_setup
    assert cred_def.public_key.l == 7
    assert cred_def.attribute_names[0] == MASTER_SECRET
    bare, _ = create_cred_def(trader_schema, (), TEST_PROFILE, "did:tc:x", rng)
    assert bare.public_key.l == len(trader_schema.attribute_names) + 1


def test_cred_def_public_part_has_no_factors(cred_setup):
    cred_def, secret = cred_setup
    blob = canonical.encode(cred_def.to_record())
    assert canonical.encode(secret.key.p) not in blob
    assert canonical.encode(secret.key.q) not in blob
    assert "p" not in cred_def.to_record()["public_key"]


def test_cred_def_record_roundtrip(cred_setup):
    cred_def, _ = cred_setup
    again = anoncreds.CredentialDefinition.from_record(canonical.decode(canonical.encode(cred_def.to_record())))
    assert again == cred_def and again.id == cred_def.id


def test_extras_cannot_shadow_schema(trader_schema, rng):
    with pytest.raises(DuplicateAttribute):
        create_cred_def(trader_schema, ("name",), TEST_PROFILE, "did:tc:x", rng)


# -- issuance -------------------------------------------------------------------------

def test_blinding_proof(cred_setup, rng):
    cred_def, secret = cred_setup
    ms = MasterSecret.generate(TEST_PROFILE, rng)
    req, _ = create_cred_request(cred_def, ms, secret.offer_nonce(rng), "did:tc:h", rng)
    assert verify_cred_request(cred_def, req)
    n = cred_def.public_key.n
    tampered = dataclasses.replace(req, blinded_secret=req.blinded_secret * cred_def.public_key.S % n)
    assert not verify_cred_request(cred_def, tampered)
    with pytest.raises(InvalidBlindingProof):
        issue_credential(cred_def, secret, tampered, values(), rng)
    assert "m1" not in req.to_record()
    assert canonical.encode(ms.m1) not in canonical.encode(req.to_record())
    assert "hidden" in repr(ms)


def test_issuer_nonce_single_use(cred_setup, rng):
    cred_def, secret = cred_setup
    ms = MasterSecret.generate(TEST_PROFILE, rng)
    req, _ = create_cred_request(cred_def, ms, secret.offer_nonce(rng), "did:tc:h", rng)
    issue_credential(cred_def, secret, req, values(), rng)
    with pytest.raises(NonceReused):
        issue_credential(cred_def, secret, req, values(), rng)
    forged, _ = create_cred_request(cred_def, ms, 12345, "did:tc:h", rng)
    with pytest.raises(NonceReused):
        issue_credential(cred_def, secret, forged, values(), rng)


def test_issued_credential_satisfies_cl_relation(cred_setup, rng):
    cred_def, secret = cred_setup
    cred, ms = issue(cred_def, secret, values(), rng)
    assert cl_relation_holds(cred_def, cred, ms.m1)
    assert signature_holds(cred_def, cred, ms)
    lo, hi = 1 << (TEST_PROFILE.e_bits - 1), (1 << (TEST_PROFILE.e_bits - 1)) + (1 << TEST_PROFILE.e_range_bits)
    assert lo <= cred.e <= hi


def test_flipped_attribute_breaks_signature(cred_setup, rng):
    cred_def, secret = cred_setup
    cred, ms = issue(cred_def, secret, values(), rng)
    forged = dataclasses.replace(cred, raw_values={**cred.raw_values, "reputation": 81},
                                 attribute_values={**cred.attribute_values, "reputation": 81})
    assert not cl_relation_holds(cred_def, forged, ms.m1)
    assert not signature_holds(cred_def, forged, ms)
    assert not signature_holds(cred_def, cred, MasterSecret(ms.m1 + 1))


def test_attribute_encoding(cred_setup):
    n = cred_setup[0].public_key.n
    assert anoncreds.encode_attribute(42, n) == 42
    assert anoncreds.encode_attribute("Lyon", n) == oracle_encode("Lyon", n)
    for bad in (True, -1, 2 ** 33, 1.5):
        with pytest.raises(InvalidArgument):
            anoncreds.encode_attribute(bad, n)


def test_issuance_arity_checked(cred_setup, rng):
    cred_def, secret = cred_setup
    bad = values()
    del bad["location"]
    with pytest.raises(anoncreds.ArityMismatch):
        issue(cred_def, secret, bad, rng)


# -- proofs ------------------------------------------------------------------------------

def test_selective_disclosure_with_predicate(cred_setup, rng):
    cred_def, secret = cred_setup
    cred, ms = issue(cred_def, secret, values(reputation=80), rng)
    req = request(["location"], [Predicate("reputation", 50)], cred_def)
    proof = generate_proof(cred, ms, req, cred_def, rng)
    assert verify_proof(proof, req, cred_def)
    assert proof.revealed_values == {"location": "Lyon"}
    assert set(proof.m_hat) == {MASTER_SECRET, "name", "reputation", "issuer_info", "trade_type", REVOCATION_INDEX}


def test_unsatisfied_predicate_produces_no_proof(cred_setup, rng):
    cred_def, secret = cred_setup
    cred, ms = issue(cred_def, secret, values(reputation=40), rng)
    with pytest.raises(PredicateUnsatisfied):
        generate_proof(cred, ms, request([], [Predicate("reputation", 50)], cred_def), cred_def, rng)
    with pytest.raises(PredicateUnsatisfied):
        generate_proof(cred, ms, request([], [Predicate("name", 1)], cred_def), cred_def, rng)


def test_proof_request_validation():
    with pytest.raises(InvalidArgument):
        ProofRequest((MASTER_SECRET,), (), None, 1)
    with pytest.raises(InvalidArgument):
        ProofRequest(("reputation",), (Predicate("reputation", 1),), None, 1)
    with pytest.raises(InvalidArgument):
        Predicate("reputation", 1, "<=")


def test_stale_nonce_and_wrong_issuer(cred_setup, trader_schema, rng):
    cred_def, secret = cred_setup
    cred, ms = issue(cred_def, secret, values(), rng)
    req = request([], [], cred_def, nonce=1)
    proof = generate_proof(cred, ms, req, cred_def, rng)
    assert verify_proof(proof, request([], [], cred_def, nonce=2), cred_def).reason == "stale-nonce"
    other, _ = create_cred_def(trader_schema, DEFAULT_EXTRAS, TEST_PROFILE, "did:tc:other", rng)
    assert verify_proof(proof, req, other).reason == "issuer-mismatch"


def test_revocation_lookup(cred_setup, rng):
    cred_def, secret = cred_setup
    cred, ms = issue(cred_def, secret, values(index=3), rng)
    req = request([REVOCATION_INDEX], [], cred_def)
    proof = generate_proof(cred, ms, req, cred_def, rng)
    assert verify_proof(proof, req, cred_def, lambda cd, i: False)
    assert verify_proof(proof, req, cred_def, lambda cd, i: i == 3).reason == "revoked"
    hidden_index = request([], [], cred_def)
    proof = generate_proof(cred, ms, hidden_index, cred_def, rng)
    assert verify_proof(proof, hidden_index, cred_def, lambda cd, i: False).reason == "revocation-unverifiable"


def integer_paths(value, path=()):
    """Every integer leaf of a proof record, as a key path."""
    if isinstance(value, bool):
        return
    if isinstance(value, int):
        yield path
    elif isinstance(value, dict):
        for k, v in value.items():
            yield from integer_paths(v, path + (k,))
    elif isinstance(value, list):
        for i, v in enumerate(value):
            yield from integer_paths(v, path + (i,))


def mutate(record, path, fn):
    rec = canonical.decode(canonical.encode(record))
    target = rec
    for key in path[:-1]:
        target = target[key]
    target[path[-1]] = fn(target[path[-1]])
    return rec


def test_every_single_field_mutation_rejects(cred_setup, rng):
    cred_def, secret = cred_setup
    cred, ms = issue(cred_def, secret, values(reputation=77), rng)
    req = request(["location", REVOCATION_INDEX], [Predicate("reputation", 50)], cred_def)
    proof = generate_proof(cred, ms, req, cred_def, rng)
    assert verify_proof(proof, req, cred_def)
    record = proof.to_record()
    paths = list(integer_paths(record))
    assert len(paths) > 15
    for path in paths:
        for fn in (lambda v: v + 1, lambda v: v - 1 if v > 0 else v + 2):
            forged = anoncreds.Proof.from_record(mutate(record, path, fn))
            assert not verify_proof(forged, req, cred_def), path
    # non-integer fields
    for key, value in (("cred_def_id", "creddef:" + "0" * 64), ("revealed_values", {"location": "Paris",
                                                                                    REVOCATION_INDEX: 1})):
        forged = anoncreds.Proof.from_record({**record, key: value})
        assert not verify_proof(forged, req, cred_def), key
    swapped = anoncreds.Proof.from_record(mutate(record, ("predicate_proofs", 0, "attribute"), lambda v: "name"))
    assert not verify_proof(swapped, req, cred_def)


def test_serialized_proof_hides_attributes(cred_setup):
    cred_def, secret = cred_setup
    r = random.Random(5)
    for trial in range(10):
        hidden_name = f"Trader-{r.getrandbits(64):x}"
        reputation = (1 << 31) + r.getrandbits(30)
        cred, ms = issue(cred_def, secret, values(name=hidden_name, reputation=reputation), r)
        req = request(["location"], [Predicate("reputation", 1 << 30)], cred_def, nonce=trial)
        proof = generate_proof(cred, ms, req, cred_def, r)
        blob = canonical.encode(proof.to_record())
        assert hidden_name.encode() not in blob
        assert reputation.to_bytes(4, "big") not in blob
        assert ms.m1.to_bytes((ms.m1.bit_length() + 7) // 8, "big") not in blob
        assert b"Lyon" in blob


_COMPLETENESS_DEF = create_cred_def(create_schema("trader", "1.0", ["name", "location", "reputation"]),
                                    DEFAULT_EXTRAS, TEST_PROFILE, "did:tc:issuer", random.Random(21))
_NONCES = random.Random(22)  # advances across examples so replayed seeds never reuse an issuer nonce

ATTRS = ("name", "location", "reputation", "issuer_info", "trade_type", REVOCATION_INDEX)


@settings(max_examples=200)
@given(
    name=st.text(min_size=1, max_size=12),
    location=st.text(min_size=1, max_size=12),
    reputation=st.integers(0, 2 ** 32),
    reveal=st.sets(st.sampled_from(ATTRS)),
    threshold_frac=st.one_of(st.none(), st.floats(0, 1)),
    seed=st.integers(0, 2 ** 32),
)
def test_completeness(name, location, reputation, reveal, threshold_frac, seed):
    cred_def, secret = _COMPLETENESS_DEF
    r = random.Random(seed)
    cred, ms = issue(cred_def, secret, values(name, location, reputation), r, nonce_rng=_NONCES)
    assert cl_relation_holds(cred_def, cred, ms.m1)
    preds = ()
    if threshold_frac is not None:
        reveal = reveal - {"reputation"}
        preds = (Predicate("reputation", int(reputation * threshold_frac)),)
    req = request(sorted(reveal), preds, cred_def, nonce=seed)
    proof = generate_proof(cred, ms, req, cred_def, r)
    assert verify_proof(proof, req, cred_def)
    assert set(proof.revealed_values) == reveal


def test_predicate_grid():
    schema = create_schema("score", "1", ["score"])
    r = random.Random(11)
    cred_def, secret = create_cred_def(schema, (), TEST_PROFILE, "did:tc:grid", r)
    ms = MasterSecret.generate(TEST_PROFILE, r)
    outcomes = {}
    for value in range(51):
        req0, blinding = create_cred_request(cred_def, ms, secret.offer_nonce(r), "did:tc:g", r)
        cred = finalize_credential(cred_def, issue_credential(cred_def, secret, req0, {"score": value}, r),
                                   blinding, ms)
        for threshold in range(51):
            req = ProofRequest((), (Predicate("score", threshold),), cred_def.id, value * 100 + threshold)
            if value >= threshold:
                ok = bool(verify_proof(generate_proof(cred, ms, req, cred_def, r), req, cred_def))
            else:
                with pytest.raises(PredicateUnsatisfied):
                    generate_proof(cred, ms, req, cred_def, r)
                # best cheating attempt: an honest proof for the true value relabelled
                honest = ProofRequest((), (Predicate("score", value),), cred_def.id, req.nonce)
                proof = generate_proof(cred, ms, honest, cred_def, r)
                forged = dataclasses.replace(proof, predicate_proofs=(
                    dataclasses.replace(proof.predicate_proofs[0], threshold=threshold),))
                ok = bool(verify_proof(forged, req, cred_def))
            outcomes[value, threshold] = ok
    assert all(outcomes[v, t] == (v >= t) for v in range(51) for t in range(51))

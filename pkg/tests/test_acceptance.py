"""Acceptance criteria, one test per criterion (7 is split into its four orderings).

Each test prints a single PASS/FAIL line, and the lines are repeated in the
terminal summary.
"""

import dataclasses
import random
import time

import pytest

from tradechain import anoncreds
from tradechain.anoncreds import (
    DEFAULT_EXTRAS, REVOCATION_INDEX, MasterSecret, Predicate, ProofRequest, create_cred_def,
    create_cred_request, create_schema, finalize_credential, generate_proof, issue_credential, verify_proof,
)
from tradechain.bench import COMPUTE_SUFFIX, bench_overheads, bench_throughput
from tradechain.cpabe import Gate, Leaf, abe_decrypt, abe_encrypt, abe_keygen, abe_setup, policy_satisfied
from tradechain.crypto_math import TEST_PROFILE
from tradechain.errors import (
    AbeDecryptError, DeletedDid, PredicateUnsatisfied, QuotaExceeded, TokenRejected, UnusedPreviousDid,
)
from tradechain.ledger_core import verify_chain, verify_export
from tradechain.network import Network
from tradechain.query import FIELD_UNIVERSE, QueryParams, find_did_substrings, params, sign_request
from tradechain.scenario import demo_scenario, run_scenario

import conftest
from conftest import make_world
from test_anoncreds import cl_relation_holds, integer_paths, mutate
from test_cpabe import collude

REPETITIONS = 10
REQUIRED = 8


@pytest.fixture
def report(capsys):
    def emit(criterion, ok, detail):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
        conftest.ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return emit


# -- 1 -------------------------------------------------------------------------

def test_criterion_1_end_to_end(report):
    t0 = time.perf_counter()
    outcome = run_scenario(demo_scenario(), profile=TEST_PROFILE)
    elapsed = time.perf_counter() - t0
    net, s = outcome.network, outcome.summary

    # open the registration proof as the TML admin received it
    admin = net.admin.agent
    proofs = [admin.open_from(e)["proof"] for e in net.transport.history if e.kind == "proof"]
    schema_attrs = set(net.idml.lookup_schema(net.schemas["trader_license"]).attribute_names)
    revealed = [set(p["revealed_values"]) for p in proofs]
    checks = {
        "exit 0": outcome.exit_code == 0,
        "runtime < 60 s": elapsed < 60,
        "schema and cred def on IDML": len(net.schemas) == 1 and len(net.cred_defs) == 1,
        "one registration": s.registered_traders == 1 and len(proofs) == 1,
        "no schema attribute revealed": all(r.isdisjoint(schema_attrs) for r in revealed),
        "1 commodity, 2 trades": (s.commodities, s.trades) == (1, 2),
        "fresh pseudonyms": _fresh_pseudonyms(net),
        "token issued": s.tokens == 1,
        "redacted records": _demo_records_ok(net),
    }
    failed = [k for k, v in checks.items() if not v]
    ok = report(1, not failed, f"demo in {elapsed:.2f} s; revealed {sorted(set().union(*revealed))}; "
                               f"failed checks {failed or 'none'}")
    assert ok, failed


def _fresh_pseudonyms(net):
    trades = [e.payload_value() for e in net.tml.ledger.entries() if e.tx_type == "TX_tr"]
    dids = [d for p in trades for d in (p["DID_p_SB"], p["DID_p_BS"])]
    verinyms = {a.verinym for a in net.actors.values() if a.verinyms}
    return len(dids) == len(set(dids)) == 4 and verinyms.isdisjoint(dids)


def _demo_records_ok(net):
    (result,) = net.results
    return result.count == 2 and all(set(r.fields) == {"CID", "quantity"} and r.fields["quantity"] == 100
                                     for r in result.records)


# -- 2 -------------------------------------------------------------------------

def test_criterion_2_anoncreds(report):
    schema = create_schema("trader", "1.0", ["name", "location", "reputation"])
    r = random.Random(2024)
    cred_def, secret = create_cred_def(schema, DEFAULT_EXTRAS, TEST_PROFILE, "did:tc:acc", r)
    attrs = ("name", "location", "reputation", "issuer_info", "trade_type", REVOCATION_INDEX)

    accepted = relation = 0
    proofs = []
    for i in range(200):
        vals = {"name": f"t{r.getrandbits(40):x}", "location": r.choice(["Lyon", "Oslo", "Pune"]),
                "reputation": r.randrange(0, 2 ** 32), "issuer_info": "SCCA", "trade_type": "grain",
                REVOCATION_INDEX: i + 1}
        ms = MasterSecret.generate(TEST_PROFILE, r)
        req0, blinding = create_cred_request(cred_def, ms, secret.offer_nonce(r), "did:tc:h", r)
        cred = finalize_credential(cred_def, issue_credential(cred_def, secret, req0, vals, r), blinding, ms)
        relation += cl_relation_holds(cred_def, cred, ms.m1)
        reveal = {a for a in attrs if r.random() < 0.4} - {"reputation"}
        preds = (Predicate("reputation", r.randint(0, vals["reputation"])),) if r.random() < 0.5 else ()
        req = ProofRequest(tuple(sorted(reveal)), preds, cred_def.id, i)
        proof = generate_proof(cred, ms, req, cred_def, r)
        accepted += bool(verify_proof(proof, req, cred_def))
        if i < 5:
            proofs.append((proof, req))

    mutations = rejected = 0
    for proof, req in proofs:
        record = proof.to_record()
        for path in integer_paths(record):
            for fn in (lambda v: v + 1, lambda v: v - 1 if v > 0 else v + 2):
                mutations += 1
                rejected += not verify_proof(anoncreds.Proof.from_record(mutate(record, path, fn)), req, cred_def)

    grid_ok = _predicate_grid()
    ok = accepted == relation == 200 and rejected == mutations > 0 and grid_ok
    report(2, ok, f"{accepted}/200 cycles accepted, CL relation {relation}/200, "
                  f"{rejected}/{mutations} mutations rejected, grid [0,50]^2 {'exact' if grid_ok else 'WRONG'}")
    assert ok


def _predicate_grid():
    schema = create_schema("score", "1", ["score"])
    r = random.Random(12)
    cred_def, secret = create_cred_def(schema, (), TEST_PROFILE, "did:tc:grid", r)
    ms = MasterSecret.generate(TEST_PROFILE, r)
    for value in range(51):
        req0, blinding = create_cred_request(cred_def, ms, secret.offer_nonce(r), "did:tc:g", r)
        cred = finalize_credential(cred_def, issue_credential(cred_def, secret, req0, {"score": value}, r),
                                   blinding, ms)
        for threshold in range(51):
            req = ProofRequest((), (Predicate("score", threshold),), cred_def.id, value * 100 + threshold)
            if value >= threshold:
                accepted = bool(verify_proof(generate_proof(cred, ms, req, cred_def, r), req, cred_def))
            else:
                try:
                    generate_proof(cred, ms, req, cred_def, r)
                    return False
                except PredicateUnsatisfied:
                    pass
                honest = ProofRequest((), (Predicate("score", value),), cred_def.id, req.nonce)
                proof = generate_proof(cred, ms, honest, cred_def, r)
                forged = dataclasses.replace(proof, predicate_proofs=(
                    dataclasses.replace(proof.predicate_proofs[0], threshold=threshold),))
                accepted = bool(verify_proof(forged, req, cred_def))
            if accepted != (value >= threshold):
                return False
    return True


# -- 3 -------------------------------------------------------------------------

ABE_ATTRS = [f"a:{i}" for i in range(8)]


def _random_policy(r, depth):
    if depth == 1 or r.random() < 0.3:
        return Leaf(r.choice(ABE_ATTRS))
    children = tuple(_random_policy(r, depth - 1) for _ in range(r.randint(1, 3)))
    return Gate(r.randint(1, len(children)), children)


def test_criterion_3_cpabe(report):
    r = random.Random(303)
    authority = abe_setup(rng=r)
    msg = b"R|Param_i"
    agree = satisfied = 0
    for _ in range(500):
        policy = _random_policy(r, 3)
        attrs = set(r.sample(ABE_ATTRS, r.randint(1, len(ABE_ATTRS))))
        ct = abe_encrypt(authority.master_public, policy, msg, r)
        key = abe_keygen(authority, attrs, r)
        expected = policy_satisfied(policy, attrs)
        satisfied += expected
        try:
            got = abe_decrypt(key, ct) == msg
        except AbeDecryptError:
            got = False
        agree += got == expected

    ct = abe_encrypt(authority.master_public, "and(role:auditor, org:A)", msg, r)
    alice = abe_keygen(authority, {"role:auditor"}, r)
    bob = abe_keygen(authority, {"org:A"}, r)
    colluded = []
    for pooled in (collude(alice, bob), collude(bob, alice)):
        try:
            colluded.append(abe_decrypt(pooled, ct) == msg)
        except AbeDecryptError:
            colluded.append(False)
    ok = agree == 500 and not any(colluded)
    report(3, ok, f"{agree}/500 pairs agree with policy_satisfied ({satisfied} satisfiable); "
                  f"collusion decrypts: {sum(colluded)}/2")
    assert ok


# -- 4 -------------------------------------------------------------------------

def _mutations(token):
    for f in dataclasses.fields(token):
        value = getattr(token, f.name)
        if isinstance(value, str):
            yield f.name, value + "x"
        elif isinstance(value, bytes):
            yield f.name, bytes([value[0] ^ 1]) + value[1:]
        elif isinstance(value, int):
            yield f.name, value + 1
        elif isinstance(value, tuple):
            yield f.name, (value[0], value[1] + 1)
            yield f.name, (value[0] + 1, value[1])
        elif isinstance(value, QueryParams):
            yield f.name, QueryParams(value.fields | {"unit_price"}, value.cid, value.max_records)
            yield f.name, QueryParams(value.fields, "CID-other", value.max_records)
            yield f.name, QueryParams(value.fields, value.cid, 5)
        else:  # pragma: no cover
            raise AssertionError(f"no mutation for {f.name}")


def test_criterion_4_token_security(report):
    net = make_world(seed=44)
    net.create("alice", "C1", "grain", 5, 5)
    auditor = net.actor("auditor")
    token = net.issue_token("alice", "auditor", "T", params("CID", "quantity"), params("CID"), uses=2,
                            expiry_in=1000)

    def attempt(tok, now=None):
        try:
            net.qsc.execute_query(tok, auditor.verinym, sign_request(auditor, tok), now=now)
            return True
        except TokenRejected:
            return False

    muts = list(_mutations(token))
    covered = {name for name, _ in muts}
    fields = {f.name for f in dataclasses.fields(token)}
    rejected = sum(not attempt(dataclasses.replace(token, **{n: v})) for n, v in muts)
    uses = [attempt(token) for _ in range(3)]
    fresh = net.issue_token("alice", "auditor", "T2", params("CID"), expiry_in=10)
    expired = not attempt(fresh, now=fresh.expiry + 1)
    ok = covered == fields and rejected == len(muts) and uses == [True, True, False] and expired
    report(4, ok, f"{rejected}/{len(muts)} mutations over {len(covered)}/{len(fields)} fields rejected; "
                  f"uses {uses}; expired rejected {expired}")
    assert ok


# -- 5 -------------------------------------------------------------------------

def test_criterion_5_redaction(report):
    nets = [run_scenario(demo_scenario()).network]
    net = make_world(seed=55)
    net.create("alice", "C1", "grain", 10, 4)
    net.create("bob", "C2", "rice", 20, 3)
    net.trade("alice", "bob", "C1", "grain", 10, 5)
    net.trade("bob", "carol", "C1", "grain", 10, 6)
    net.trade("bob", "alice", "C2", "rice", 20, 4)
    every = params(*FIELD_UNIVERSE)
    for trader in ("alice", "bob", "carol"):
        net.issue_token(trader, "auditor", f"all-{trader}", every)
        net.query("auditor", f"all-{trader}")
        net.issue_token(trader, "auditor", f"cid-{trader}", params("CID", "counterparty_role"))
        net.query("auditor", f"cid-{trader}")
    nets.append(net)

    queries = leaks = dids = records = 0
    for n in nets:
        inventory = set(n.idml.all_dids()) | n.tml.all_dids() | n.all_dids()
        dids = max(dids, len(inventory))
        for result in n.results:
            queries += 1
            records += result.count
            leaks += len(find_did_substrings(result.to_bytes(), inventory))
    ok = leaks == 0 and queries == 7 and records > 0
    report(5, ok, f"{queries} queries, {records} records, {leaks} DID substrings found "
                  f"(inventory up to {dids} DIDs)")
    assert ok


# -- 6 -------------------------------------------------------------------------

def test_criterion_6_threat_mitigations(report):
    from tradechain.agents import onboard

    net = Network(seed=66, profile=TEST_PROFILE, pseudonym_quota=4, quota_window_ms=10 ** 9)
    for name in ("alice", "bob", "carol", "dave"):
        net.add_actor(name, "trader")
    net.bootstrap()
    net.onboard("alice")
    a = net.actor("alice")
    # each handshake alice starts logs 2 pseudonym events against her quota of 4
    onboard(a, net.actor("bob"))
    onboard(a, net.actor("carol"))
    try:
        onboard(a, net.actor("dave"))
        quota = False
    except QuotaExceeded:
        quota = True

    w = make_world(seed=67)
    first = w.actor("bob").verinym
    second = w.new_verinym("bob")
    w.register_trader("bob", "scca", "reputation", 50, did_v=second)
    try:
        w.create("bob", "X1", "grain", 1, 1, did_v=second)
        unused = False
    except UnusedPreviousDid:
        unused = True
    w.create("bob", "X1", "grain", 1, 1, did_v=first)

    w.create("alice", "X2", "grain", 1, 1)
    w.trade("alice", "carol", "X2", "grain", 1, 2)
    before = len(w.tml.commodity_history("X2", w.qsc._capability).history)
    w.delete_wallet("carol")
    state = w.tml.commodity_history("X2", w.qsc._capability)
    try:
        w.create("carol", "X3", "grain", 1, 1)
        blocked = False
    except DeletedDid:
        blocked = True
    auditable = len(state.history) == before == 2 and w.tml.audit() == [] and w.tml.ledger.verify_chain()
    ok = quota and unused and auditable and blocked
    report(6, ok, f"quota enforced {quota}; unused-previous-DID_v enforced {unused}; "
                  f"history auditable after deletion {auditable}; deleted DID blocked {blocked}")
    assert ok


# -- 7 -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def throughput_reps():
    return [bench_throughput(seed=seed, samples=60, profile=TEST_PROFILE) for seed in range(1, REPETITIONS + 1)]


@pytest.fixture(scope="module")
def overhead_reps():
    return [bench_overheads(TEST_PROFILE, runs=10, seed=seed) for seed in range(1, REPETITIONS + 1)]


def _ordering(report, label, holds, detail):
    n = sum(holds)
    ok = n >= REQUIRED
    report(label, ok, f"held in {n}/{REPETITIONS} repetitions (need {REQUIRED}); {detail}")
    assert ok, f"{label}: {n}/{REPETITIONS}"


def test_criterion_7a_trade_vs_create_saturation(report, throughput_reps):
    pairs = [(r.saturation("TX_tr"), r.saturation("TX_cr")) for r in throughput_reps]
    _ordering(report, "7a", [tr >= cr for tr, cr in pairs],
              "TX_tr/TX_cr saturation tps " + ", ".join(f"{tr:.1f}/{cr:.1f}" for tr, cr in pairs[:3]) + ", ...")


def test_criterion_7b_filtered_vs_unfiltered_saturation(report, throughput_reps):
    pairs = [(r.saturation("query_filtered"), r.saturation("query_unfiltered")) for r in throughput_reps]
    _ordering(report, "7b", [f <= u for f, u in pairs],
              "filtered/unfiltered tps " + ", ".join(f"{f:.1f}/{u:.1f}" for f, u in pairs[:3]) + ", ...")


def test_criterion_7c_query_vs_trade_latency(report, overhead_reps):
    pairs = [(r.timing("query/validation_and_return").median_ms, r.timing("trade/tx_tr_commit").median_ms)
             for r in overhead_reps]
    _ordering(report, "7c", [q < t for q, t in pairs],
              "query/TX_tr median ms " + ", ".join(f"{q:.2f}/{t:.1f}" for q, t in pairs[:3]) + ", ...")


def test_criterion_7d_did_creation_dominates_registration(report, overhead_reps):
    def largest(r):
        subs = [t for t in r.timings if t.function.startswith("registration/")
                and t.function != "registration/total" and not t.function.endswith(COMPUTE_SUFFIX)]
        return max(subs, key=lambda t: t.mean_ms).function

    winners = [largest(r) for r in overhead_reps]
    _ordering(report, "7d", [w == "registration/did_v_creation" for w in winners],
              f"largest sub-timing per repetition: {sorted(set(winners))}")


# -- 8 -------------------------------------------------------------------------

def test_criterion_8_ledger_integrity(report, tmp_path):
    nets = [run_scenario(demo_scenario()).network, make_world(seed=88)]
    chains = all(n.idml.ledger.verify_chain() and n.tml.ledger.verify_chain() for n in nets)
    flips = detected = 0
    net = nets[0]
    for name, ledger in (("idml", net.idml.ledger), ("tml", net.tml.ledger)):
        path = tmp_path / f"{name}.log"
        ledger.export(path)
        chains = chains and verify_export(path)
        raw = path.read_bytes()
        bad = tmp_path / f"{name}.bad"
        for pos in range(0, len(raw), 7 if name == "idml" else 3):
            damaged = bytearray(raw)
            damaged[pos] ^= 1 << (pos % 8)
            bad.write_bytes(bytes(damaged))
            flips += 1
            detected += not verify_export(bad)
    # in-memory flips of each stored field of every TML entry
    entries = list(net.tml.ledger.entries())
    for i, e in enumerate(entries):
        for field in ("payload", "signature", "prev_hash", "entry_hash"):
            value = bytearray(getattr(e, field))
            value[len(value) // 2] ^= 0x10
            tampered = entries[:i] + [dataclasses.replace(e, **{field: bytes(value)})] + entries[i + 1:]
            flips += 1
            detected += not verify_chain(tampered)
    ok = chains and detected == flips
    report(8, ok, f"chains valid {chains}; {detected}/{flips} injected byte flips detected")
    assert ok

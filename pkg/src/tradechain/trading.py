"""Trader-side protocols against the TML: ZKP registration, TX_cr and TX_tr."""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass

from . import anoncreds, canonical
from .agents import Agent, connection_between, onboard
from .errors import InvalidArgument, ProofRejected, Unauthorized, UnknownCredDef, VerkeyMismatch
from .keys import verify_signature
from .wallet import Connection
from .tml import (
    REGISTERED,
    REJECTED,
    TML,
    CreateTx,
    TradeTx,
    commodity_hash,
    cr_preimage,
    owner_auth_preimage,
    tr_preimage,
)


@dataclass(frozen=True)
class RegistrationPolicy:
    """What the admin asks a joining trader to prove."""

    cred_def_id: str
    predicates: tuple[anoncreds.Predicate, ...] = ()
    revealed: tuple[str, ...] = (anoncreds.REVOCATION_INDEX,)

    def proof_request(self, nonce: int) -> anoncreds.ProofRequest:
        return anoncreds.ProofRequest(self.revealed, self.predicates, self.cred_def_id, nonce)


class TmlAdmin:
    """Admin-side state for registration; wraps an onboarded agent."""

    def __init__(self, agent: Agent, tml: TML, policy: RegistrationPolicy):
        self.agent = agent
        self.tml = tml
        self.policy = policy
        self._outstanding: dict[str, tuple[int, str, str]] = {}  # channel -> (nonce, did_v, trader channel)

    @property
    def signer(self):
        return self.agent.wallet.signer(self.agent.verinym)


def _join_message(did_v: str, channel: str) -> bytes:
    return canonical.encode(["join", did_v, channel])


def register_trader(admin: TmlAdmin, trader: Agent, did_v: str | None = None,
                    credential: anoncreds.Credential | None = None,
                    timings: dict | None = None) -> anoncreds.VerificationResult:
    """Join request, proof request, proof, verification and TML commit.

    Raises ``ProofRejected`` (after logging the rejection) if the proof fails.
    """
    did_v = did_v or trader.verinym
    try:
        conn_admin, conn_trader = connection_between(admin.agent, trader)
    except Unauthorized:
        conn_admin, conn_trader = onboard(admin.agent, trader)

    join = {"did_v": did_v, "sig": trader.wallet.sign(did_v, _join_message(did_v, conn_trader.my_did))}
    trader.transport.send(conn_trader.their_did, "join", trader.seal_to(conn_trader, join))

    # admin: authenticate the DID_v against IDML and answer with a proof request
    env = admin.agent.transport.receive(admin.agent.name, "join")
    tv = time.perf_counter()
    req = admin.agent.open_from(env)
    conn = admin.agent.wallet.connection_from(env.to)
    verkey = admin.tml.idml.lookup_verkey(req["did_v"])
    if conn is None or verkey is None or not verify_signature(
            verkey, req["sig"], _join_message(req["did_v"], conn.their_did)):
        raise VerkeyMismatch("join request not signed by the claimed DID_v")
    tv = time.perf_counter() - tv
    nonce = admin.agent.rng.getrandbits(128)
    admin._outstanding[env.to] = (nonce, req["did_v"], conn.their_did)
    pr = admin.policy.proof_request(nonce)
    admin.agent.transport.send(conn.their_did, "proof_request",
                               admin.agent.seal_to(conn, {"proof_request": pr.to_record()}))

    # trader: build the proof from a credential of the requested definition
    pr_in = anoncreds.ProofRequest.from_record(
        trader.open_from(trader.transport.receive(trader.name, "proof_request"))["proof_request"])
    cd = trader.idml.lookup_cred_def(pr_in.issuer_constraints)
    if cd is None:
        raise UnknownCredDef(str(pr_in.issuer_constraints))
    if credential is None:
        owned = trader.wallet.credentials(cd.id)
        if not owned:
            raise InvalidArgument(f"{trader.name} holds no credential for {cd.id}")
        credential = owned[-1]
    t0 = time.perf_counter()
    proof = anoncreds.generate_proof(credential, trader.wallet.master_secret, pr_in, cd, trader.rng)
    t1 = time.perf_counter()
    trader.transport.send(conn_trader.their_did, "proof",
                          trader.seal_to(conn_trader, {"proof": proof.to_record()}))

    # admin: verify against IDML state and log the outcome
    env = admin.agent.transport.receive(admin.agent.name, "proof")
    nonce, claimed, channel = admin._outstanding.pop(env.to)
    got = anoncreds.Proof.from_record(admin.agent.open_from(env)["proof"])
    admin_cd = admin.tml.idml.lookup_cred_def(admin.policy.cred_def_id)
    t2 = time.perf_counter()
    result = anoncreds.verify_proof(got, admin.policy.proof_request(nonce), admin_cd,
                                    admin.tml.idml.lookup_revocation)
    t3 = time.perf_counter()
    if timings is not None:
        timings["did_v_verification"] = tv * 1000
        timings["proof_generation"] = (t1 - t0) * 1000
        timings["proof_verification"] = (t3 - t2) * 1000
    status = REGISTERED if result.accepted else REJECTED
    if result.accepted:
        admin.tml.enroll(channel, claimed)
    admin.tml.record_registration(admin.signer, claimed, got.digest(), status)
    if not result.accepted:
        raise ProofRejected(result.reason)
    return result


def create_commodity(trader: Agent, tml: TML, cid: str, commodity_type: str, quantity: int,
                     unit_price: int, notes: str = "", did_v: str | None = None) -> int:
    did_v = did_v or trader.verinym
    h_data, preimage = commodity_hash(commodity_type, quantity, unit_price, notes)
    trader.wallet.store_data(h_data, preimage)
    sig = trader.wallet.sign(did_v, cr_preimage(cid, h_data, did_v))
    seq = tml.create_commodity(CreateTx(cid, h_data, did_v, sig), trader.wallet.signer(did_v))
    trader.wallet.mark_used(did_v)
    trader.holdings[cid] = did_v
    return seq


def owned_did(agent: Agent, cid: str) -> str:
    """The DID in ``agent``'s wallet that currently owns ``cid``."""
    owner = agent.holdings.get(cid)
    if owner is None:
        raise Unauthorized(f"{agent.name} does not own {cid}")
    return owner


def trade_commodity(seller: Agent, buyer: Agent, tml: TML, cid: str, commodity_type: str, quantity: int,
                    unit_price: int, notes: str = "", owner_did: str | None = None,
                    channel: tuple[Connection, Connection] | None = None) -> int:
    """Fresh pairwise pseudonyms, both signatures, then commit TX_tr.

    ``channel`` lets a caller supply a pseudonym pair it onboarded itself.
    """
    owner_did = owner_did or owned_did(seller, cid)
    c_seller, c_buyer = channel or onboard(seller, buyer)
    sb, bs = c_seller.my_did, c_buyer.my_did
    h_data, preimage = commodity_hash(commodity_type, quantity, unit_price, notes)
    pre = tr_preimage(cid, h_data, sb, bs)
    # the buyer countersigns over the pairwise channel
    seller.transport.send(bs, "trade_offer", seller.seal_to(c_seller, {"cid": cid, "h_data": h_data,
                                                                        "preimage": preimage}))
    offer = buyer.open_from(buyer.transport.receive(buyer.name, "trade_offer"))
    if hashlib.sha256(offer["preimage"]).digest() != offer["h_data"]:
        raise InvalidArgument("trade data does not match its hash")
    sig_b = buyer.wallet.sign(bs, tr_preimage(offer["cid"], offer["h_data"], sb, bs))
    buyer.transport.send(sb, "trade_accept", buyer.seal_to(c_buyer, {"sig_b": sig_b}))
    sig_b = seller.open_from(seller.transport.receive(seller.name, "trade_accept"))["sig_b"]

    sig_s = seller.wallet.sign(sb, pre)
    auth = seller.wallet.sign(owner_did, owner_auth_preimage(cid, h_data, sb, bs))
    seq = tml.trade_commodity(TradeTx(cid, h_data, sb, bs, sig_s, sig_b), seller.wallet.signer(sb), auth)
    for agent, did in ((seller, sb), (buyer, bs), (seller, owner_did)):
        agent.wallet.mark_used(did)
        agent.wallet.store_data(h_data, preimage)
    seller.holdings.pop(cid, None)
    buyer.holdings[cid] = bs
    return seq

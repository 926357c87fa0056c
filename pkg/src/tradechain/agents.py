"""Agents and the protocols they run over an in-process transport.

Each protocol function drives both ends synchronously: the sending side puts
an envelope on the transport, the receiving side pulls it off and reacts.  The
transport keeps every envelope it ever saw so tests can tamper with, drop or
replay traffic.
"""

from __future__ import annotations

import hashlib
import random
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Callable, Optional

from . import anoncreds, canonical
from .crypto_math import SecurityProfile
from .errors import (
    DecryptionFailure,
    InvalidArgument,
    MessageDropped,
    NonceMismatch,
    QuotaExceeded,
    UnauthorizedCaller,
    UnknownCredDef,
    UnknownEndpoint,
    UnknownSchema,
    Unauthorized,
    VerkeyMismatch,
)
from .idml import IDML, PSEUDONYM, TX_DID_STATUS, TX_NYM, TX_PSEUDONYM, VERINYM, Role
from .keys import seal, verify_signature
from .wallet import Connection, DidRecord, Wallet, create_wallet


@dataclass(frozen=True)
class Envelope:
    to: str
    kind: str
    body: bytes
    serial: int


Hook = Callable[[Envelope], Optional[Envelope]]


class Transport:
    """Mailboxes keyed by agent name; DIDs are routed to their owner's mailbox."""

    def __init__(self, clock=None, delay_ms: int = 0):
        self.clock = clock
        self.delay_ms = delay_ms
        self.hooks: list[Hook] = []
        self.history: list[Envelope] = []
        self._routes: dict[str, str] = {}
        self._boxes: dict[str, deque] = defaultdict(deque)
        self._serial = 0

    def bind(self, did: str, agent_name: str) -> None:
        self._routes[did] = agent_name

    def address_of(self, to: str) -> str:
        return self._routes.get(to, to)

    def send(self, to: str, kind: str, body: bytes) -> None:
        self._serial += 1
        env = Envelope(to, kind, bytes(body), self._serial)
        self.history.append(env)
        for hook in self.hooks:
            env = hook(env)
            if env is None:
                return
        if self.delay_ms and self.clock is not None:
            self.clock.advance(self.delay_ms)
        self._boxes[self.address_of(env.to)].append(env)

    def inject(self, env: Envelope) -> None:
        """Deliver ``env`` again verbatim (replay)."""
        self._boxes[self.address_of(env.to)].append(env)

    def receive(self, agent_name: str, kind: str) -> Envelope:
        box = self._boxes[agent_name]
        for i, env in enumerate(box):
            if env.kind == kind:
                del box[i]
                return env
        raise MessageDropped(f"no {kind} message for {agent_name}")

    def pending(self, agent_name: str) -> int:
        return len(self._boxes[agent_name])


class Agent:
    def __init__(self, name: str, transport: Transport, idml: IDML, profile: SecurityProfile,
                 rng: random.Random, wallet: Wallet | None = None, wallet_dir=None):
        self.name = name
        self.transport = transport
        self.idml = idml
        self.profile = profile
        self.rng = rng
        self.wallet = wallet
        self.wallet_dir = wallet_dir
        self.steward_channel: Optional[str] = None  # my pseudonym towards the Steward
        self.verinyms: list[str] = []
        self.holdings: dict[str, str] = {}  # CID -> owning DID in my wallet
        self._pending: dict[str, int] = {}
        # issuer-side state
        self.issuer_secrets: dict[str, anoncreds.IssuerSecret] = {}
        self.cred_defs: dict[str, anoncreds.CredentialDefinition] = {}
        self.issued: dict[tuple[str, int], str] = {}

    def ensure_wallet(self) -> Wallet:
        if self.wallet is None:
            self.wallet = create_wallet(self.name, self.profile, self.rng, self.wallet_dir)
        return self.wallet

    @property
    def verinym(self) -> str:
        if not self.verinyms:
            raise InvalidArgument(f"{self.name} has no verinym")
        return self.verinyms[-1]

    def logging_signer(self):
        """Identity under which this agent logs pseudonym creations."""
        if self.steward_channel is None:
            raise Unauthorized(f"{self.name} is not onboarded")
        return self.wallet.signer(self.steward_channel)

    def new_pseudonym(self, peer: str) -> DidRecord:
        wallet = self.ensure_wallet()
        submitter = self.logging_signer().did
        if submitter != self.idml.genesis.steward_did and self.idml.quota_remaining(submitter) <= 0:
            raise QuotaExceeded(f"pseudonym quota reached for {self.name}")
        rec = wallet.gen_did(PSEUDONYM, peer=peer)
        self.transport.bind(rec.did, self.name)
        return rec

    def log_pseudonym(self, did: str, verkey: bytes, control_sig: bytes) -> int:
        return self.idml.log_pseudonym(self.logging_signer(), did, verkey, control_sig)

    def seal_to(self, conn: Connection, payload: dict) -> bytes:
        return seal(conn.their_agreement_key, canonical.encode(payload), self.rng)

    def open_from(self, env: Envelope) -> dict:
        body = self.wallet.open_sealed(env.body, env.to if self.wallet.has_did(env.to) else None)
        return canonical.decode(body)


class StewardAgent(Agent):
    """Genesis trust root.  Its verinym is fixed by the genesis config."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.approved_roles: dict[str, tuple[Role, tuple[str, ...]]] = {}

    def init_verinym(self) -> DidRecord:
        wallet = self.ensure_wallet()
        rec = wallet.gen_did(VERINYM)
        self.verinyms.append(rec.did)
        self.transport.bind(rec.did, self.name)
        return rec

    def logging_signer(self):
        return self.wallet.signer(self.verinym)

    def approve(self, agent_name: str, role: Role, privileges: tuple[str, ...] = ()) -> None:
        """Out-of-band vetting: allow ``agent_name`` to hold ``role``."""
        self.approved_roles[agent_name] = (Role(role), tuple(privileges))


# --------------------------------------------------------------------------
# on-boarding (con_req / con_resp)
# --------------------------------------------------------------------------

def send_con_req(inviter: Agent, invitee: Agent) -> DidRecord:
    mine = inviter.new_pseudonym(peer=f"pending:{invitee.name}")
    inviter.log_pseudonym(mine.did, mine.verkey, inviter.wallet.control_sig(mine.did, TX_PSEUDONYM))
    nonce = inviter.rng.getrandbits(128)
    inviter._pending[mine.did] = nonce
    con_req = {"did": mine.did, "verkey": mine.verkey, "agreement_key": mine.agreement_key,
               "nonce": nonce, "label": inviter.name}
    inviter.transport.send(invitee.name, "con_req", canonical.encode(con_req))
    return mine


def answer_con_req(invitee: Agent) -> Connection:
    env = invitee.transport.receive(invitee.name, "con_req")
    req = canonical.decode(env.body)
    wallet = invitee.ensure_wallet()
    mine = wallet.gen_did(PSEUDONYM, peer=req["did"])
    invitee.transport.bind(mine.did, invitee.name)
    con_resp = {"did": mine.did, "verkey": mine.verkey, "agreement_key": mine.agreement_key,
                "nonce": req["nonce"], "label": invitee.name,
                "control_sig": wallet.control_sig(mine.did, TX_PSEUDONYM)}
    sealed = seal(req["agreement_key"], canonical.encode(con_resp), invitee.rng)
    invitee.transport.send(req["did"], "con_resp", sealed)
    conn = Connection(mine.did, req["did"], req["verkey"], req["agreement_key"], req["label"], (req["nonce"],))
    wallet.add_connection(conn)
    return conn


def accept_con_resp(inviter: Agent) -> Connection:
    env = inviter.transport.receive(inviter.name, "con_resp")
    if not inviter.wallet.has_did(env.to):
        raise DecryptionFailure("con_resp addressed to an unknown DID")
    resp = canonical.decode(inviter.wallet.open_sealed(env.body, env.to))
    expected = inviter._pending.pop(env.to, None)
    if expected is None or resp.get("nonce") != expected:
        raise NonceMismatch("con_resp nonce does not match the outstanding con_req")
    inviter.log_pseudonym(resp["did"], resp["verkey"], resp["control_sig"])
    inviter.wallet.set_peer(env.to, resp["did"])
    conn = Connection(env.to, resp["did"], resp["verkey"], resp["agreement_key"], resp["label"], (expected,))
    inviter.wallet.add_connection(conn)
    return conn


def onboard(inviter: Agent, invitee: Agent) -> tuple[Connection, Connection]:
    """Run the pairwise-pseudonym handshake; returns (inviter side, invitee side)."""
    send_con_req(inviter, invitee)
    theirs = answer_con_req(invitee)
    mine = accept_con_resp(inviter)
    if isinstance(inviter, StewardAgent) and invitee.steward_channel is None:
        invitee.steward_channel = theirs.my_did
    return mine, theirs


# --------------------------------------------------------------------------
# verinym publication
# --------------------------------------------------------------------------

def publish_verinym(agent: Agent, steward: StewardAgent, role: Role = Role.TRADER,
                    endpoint: str | None = None) -> str:
    channel = agent.wallet.connection_from(agent.steward_channel) if agent.steward_channel else None
    if channel is None:
        raise Unauthorized(f"{agent.name} has no channel to the Steward")
    rec = agent.wallet.gen_did(VERINYM)
    agent.transport.bind(rec.did, agent.name)
    channel_rec = agent.wallet.did(channel.my_did)
    msg = {"did": rec.did, "verkey": rec.verkey, "control_sig": agent.wallet.control_sig(rec.did, TX_NYM),
           "role": Role(role).value, "endpoint": endpoint or agent.name,
           "channel_did": channel.my_did, "channel_verkey": channel_rec.verkey}
    body = {"msg": msg, "sig": agent.wallet.sign(channel.my_did, canonical.encode(msg))}
    agent.transport.send(channel.their_did, "verinym", agent.seal_to(channel, body))
    steward_register_verinym(steward)
    agent.verinyms.append(rec.did)
    return rec.did


def steward_register_verinym(steward: StewardAgent) -> str:
    env = steward.transport.receive(steward.name, "verinym")
    body = steward.open_from(env)
    msg, sig = body["msg"], body["sig"]
    conn = steward.wallet.connection_from(env.to)
    if conn is None or conn.their_did != msg["channel_did"]:
        raise VerkeyMismatch("verinym request did not arrive over its claimed channel")
    on_ledger = steward.idml.lookup_verkey(msg["channel_did"])
    if on_ledger is None or on_ledger != msg["channel_verkey"] or on_ledger != conn.their_verkey:
        raise VerkeyMismatch("channel verkey differs from the IDML record")
    if not verify_signature(on_ledger, sig, canonical.encode(msg)):
        raise VerkeyMismatch("request not signed by the channel key")
    role = Role(msg["role"])
    privileges: tuple[str, ...] = ()
    if role is not Role.TRADER:
        approved = steward.approved_roles.get(conn.label)
        if approved is None or approved[0] is not role:
            raise Unauthorized(f"{conn.label} is not approved for {role.value}")
        privileges = approved[1]
    steward.idml.register_nym(steward.logging_signer(), msg["did"], msg["verkey"], role, msg["control_sig"],
                              endpoint=msg["endpoint"], privileges=privileges)
    return msg["did"]


# --------------------------------------------------------------------------
# credentialling
# --------------------------------------------------------------------------

def create_and_publish_cred_def(issuer: Agent, schema_id: str, extras=anoncreds.DEFAULT_EXTRAS,
                                keypair=None) -> anoncreds.CredentialDefinition:
    schema = issuer.idml.lookup_schema(schema_id)
    if schema is None:
        raise UnknownSchema(schema_id)
    cd, secret = anoncreds.create_cred_def(schema, extras, issuer.profile, issuer.verinym, issuer.rng, keypair)
    issuer.idml.publish_cred_def(issuer.wallet.signer(issuer.verinym), cd)
    issuer.issuer_secrets[cd.id] = secret
    issuer.cred_defs[cd.id] = cd
    return cd


def connection_between(a: Agent, b: Agent) -> tuple[Connection, Connection]:
    for conn in a.wallet.connections() if a.wallet else ():
        if b.wallet is not None and b.wallet.has_did(conn.their_did):
            back = b.wallet.connection_from(conn.their_did)
            if back is not None and back.their_did == conn.my_did:
                return conn, back
    raise Unauthorized(f"{a.name} and {b.name} share no pseudonym channel")


def issue_credential(issuer: Agent, holder: Agent, cred_def_id: str, values: dict) -> anoncreds.Credential:
    """Offer, blinded request, issuance and holder-side finalization."""
    issuer_conn, holder_conn = connection_between(issuer, holder)
    cd = issuer.cred_defs[cred_def_id]
    secret = issuer.issuer_secrets[cred_def_id]
    nonce = secret.offer_nonce(issuer.rng)
    issuer.transport.send(issuer_conn.their_did, "cred_offer",
                          issuer.seal_to(issuer_conn, {"cred_def_id": cred_def_id, "nonce": nonce}))

    offer = holder.open_from(holder.transport.receive(holder.name, "cred_offer"))
    holder_cd = holder.idml.lookup_cred_def(offer["cred_def_id"])
    if holder_cd is None:
        raise UnknownCredDef(offer["cred_def_id"])
    request, blinding = anoncreds.create_cred_request(holder_cd, holder.wallet.master_secret, offer["nonce"],
                                                      holder_conn.my_did, holder.rng)
    holder.transport.send(holder_conn.their_did, "cred_request",
                          holder.seal_to(holder_conn, {"request": request.to_record()}))

    body = issuer.open_from(issuer.transport.receive(issuer.name, "cred_request"))
    req = anoncreds.CredentialRequest.from_record(body["request"])
    index = secret.next_revocation_index()
    attrs = dict(values)
    attrs[anoncreds.REVOCATION_INDEX] = index
    issued = anoncreds.issue_credential(cd, secret, req, attrs, issuer.rng)
    issuer.issued[(cd.id, index)] = issuer_conn.their_did
    issuer.transport.send(issuer_conn.their_did, "cred_issue",
                          issuer.seal_to(issuer_conn, {"issued": issued.to_record()}))

    body = holder.open_from(holder.transport.receive(holder.name, "cred_issue"))
    issued = anoncreds.IssuedCredential.from_record(body["issued"])
    credential = anoncreds.finalize_credential(holder_cd, issued, blinding, holder.wallet.master_secret)
    holder.wallet.store_credential(credential)
    return credential


# --------------------------------------------------------------------------
# wallet deletion
# --------------------------------------------------------------------------

def delete_wallet(agent: Agent, steward: StewardAgent) -> int:
    """Owner asks the Steward to tag every DID deleted and revoke its credentials."""
    channel = agent.wallet.connection_from(agent.steward_channel)
    items = []
    for rec in agent.wallet.dids():
        if agent.idml.lookup_nym(rec.did) is not None:
            items.append({"did": rec.did, "control_sig": agent.wallet.control_sig(rec.did, TX_DID_STATUS)})
    creds = [{"cred_def_id": c.cred_def_id, "index": c.raw_values[anoncreds.REVOCATION_INDEX]}
             for c in agent.wallet.credentials() if anoncreds.REVOCATION_INDEX in c.raw_values]
    # the channel itself goes last so the request stays verifiable until the end
    items.sort(key=lambda it: it["did"] == channel.my_did)
    msg = {"dids": items, "credentials": creds, "channel_did": channel.my_did}
    body = {"msg": msg, "sig": agent.wallet.sign(channel.my_did, canonical.encode(msg))}
    agent.transport.send(channel.their_did, "delete_wallet", agent.seal_to(channel, body))

    env = steward.transport.receive(steward.name, "delete_wallet")
    body = steward.open_from(env)
    msg = body["msg"]
    verkey = steward.idml.lookup_verkey(msg["channel_did"])
    conn = steward.wallet.connection_from(env.to)
    if conn is None or conn.their_did != msg["channel_did"] or verkey is None \
            or not verify_signature(verkey, body["sig"], canonical.encode(msg)):
        raise VerkeyMismatch("deletion request not authenticated by the channel")
    signer = steward.logging_signer()
    for cred in msg["credentials"]:
        if not steward.idml.lookup_revocation(cred["cred_def_id"], cred["index"]):
            steward.idml.set_revocation(signer, cred["cred_def_id"], cred["index"])
    for item in msg["dids"]:
        nym = steward.idml.lookup_nym(item["did"])
        if nym is not None and nym.active:
            steward.idml.tag_deleted(signer, item["did"], item["control_sig"])
    for rec in agent.wallet.dids():
        agent.wallet.tag_deleted(rec.did)
    return len(msg["dids"])


# --------------------------------------------------------------------------
# wallet API endpoint registry
# --------------------------------------------------------------------------

class EndpointRegistry:
    """Maps opaque handles R to wallets; only the QSC capability may resolve them."""

    def __init__(self, capability_hash: bytes, rng: random.Random):
        self.capability_hash = capability_hash
        self.rng = rng
        self._wallets: dict[str, Wallet] = {}

    def _check(self, capability: bytes | None) -> None:
        if capability is None or hashlib.sha256(capability).digest() != self.capability_hash:
            raise UnauthorizedCaller("wallet API requires the QSC capability")

    def register(self, wallet: Wallet) -> str:
        if wallet.endpoint_id is not None and wallet.endpoint_id in self._wallets:
            return wallet.endpoint_id
        R = "R-" + self.rng.getrandbits(128).to_bytes(16, "big").hex()
        self._wallets[R] = wallet
        wallet.set_endpoint(R)
        return R

    def attach(self, wallet: Wallet) -> None:
        """Re-register a reloaded wallet under its stored handle."""
        if wallet.endpoint_id is not None:
            self._wallets[wallet.endpoint_id] = wallet

    def _wallet(self, R: str, capability: bytes | None) -> Wallet:
        self._check(capability)
        wallet = self._wallets.get(R)
        if wallet is None:
            raise UnknownEndpoint(f"no wallet behind {R}")
        return wallet

    def resolve_endpoint(self, R: str, capability: bytes | None) -> list[dict]:
        """Trade-relevant DIDs of the wallet (used ones), deleted ones included."""
        wallet = self._wallet(R, capability)
        return [{"did": d.did, "kind": d.kind, "peer": d.peer, "status": d.status}
                for d in wallet.dids() if d.used]

    def fetch_data(self, R: str, capability: bytes | None, h_data: bytes) -> Optional[bytes]:
        return self._wallet(R, capability).data(h_data)

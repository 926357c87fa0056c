"""Trade Management Ledger.

Commits trader registrations, commodity creation (TX_cr), ownership transfer
(TX_tr) and query log records.  Signing keys are resolved through the IDML;
the TML never sees which DID_v or pseudonyms belong to the same trader, except
for the admin's private enrollment map used by the fresh-DID_v rule.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from typing import Iterable, Optional

from . import canonical
from .errors import (
    AlreadyRegistered,
    BadSignature,
    DeletedDid,
    DuplicateCid,
    DuplicateRecord,
    EncodingFailure,
    InvalidArgument,
    NotOwner,
    Unauthorized,
    UnauthorizedCaller,
    UnknownCid,
    UnregisteredTrader,
    UnusedPreviousDid,
)
from .idml import IDML, PSEUDONYM, VERINYM
from .keys import SIGNATURE_SUITE, verify_signature
from .ledger_core import GENESIS, Ledger, LedgerEntry, LogicalClock, sign_tx

LEDGER_NAME = "TML"

TX_REGISTER = "REGISTER"
TX_CR = "TX_cr"
TX_TR = "TX_tr"
TX_QUERY = "QUERY"

REGISTERED = "registered"
REJECTED = "rejected"
TAG_GENERATED = "generated"
TAG_EXECUTED = "submitted & validated"
QUERY_TAGS = (TAG_GENERATED, TAG_EXECUTED)


def cr_preimage(cid: str, h_data: bytes, did_v: str) -> bytes:
    return canonical.encode(["TX_cr", cid, h_data, did_v])


def tr_preimage(cid: str, h_data: bytes, seller: str, buyer: str) -> bytes:
    return canonical.encode(["TX_tr", cid, h_data, seller, buyer])


def owner_auth_preimage(cid: str, h_data: bytes, seller: str, buyer: str) -> bytes:
    return canonical.encode(["owner-auth", cid, h_data, seller, buyer])


def registration_preimage(did_v: str, proof_hash: bytes, status: str) -> bytes:
    return canonical.encode(["registration", did_v, proof_hash, status])


def history_request(cid: str, did: str) -> bytes:
    return canonical.encode(["history", cid, did])


def commodity_hash(commodity_type: str, quantity: int, unit_price: int, notes: str = "") -> tuple[bytes, bytes]:
    """``(H_data, preimage)`` for a commodity description."""
    preimage = canonical.encode({"commodity_type": commodity_type, "quantity": quantity,
                                 "unit_price": unit_price, "notes": notes})
    return hashlib.sha256(preimage).digest(), preimage


@dataclass(frozen=True)
class CreateTx:
    cid: str
    h_data: bytes
    did_v: str
    sig_s: bytes

    def to_record(self) -> dict:
        return {"CID": self.cid, "H_data": self.h_data, "DID_v": self.did_v, "Sig_S": self.sig_s}

    @classmethod
    def from_record(cls, rec: dict) -> "CreateTx":
        return cls(rec["CID"], rec["H_data"], rec["DID_v"], rec["Sig_S"])


@dataclass(frozen=True)
class TradeTx:
    cid: str
    h_data: bytes
    did_p_sb: str
    did_p_bs: str
    sig_s: bytes
    sig_b: bytes

    def to_record(self) -> dict:
        return {"CID": self.cid, "H_data": self.h_data, "DID_p_SB": self.did_p_sb,
                "DID_p_BS": self.did_p_bs, "Sig_S": self.sig_s, "Sig_B": self.sig_b}

    @classmethod
    def from_record(cls, rec: dict) -> "TradeTx":
        return cls(rec["CID"], rec["H_data"], rec["DID_p_SB"], rec["DID_p_BS"], rec["Sig_S"], rec["Sig_B"])


@dataclass(frozen=True)
class QueryTx:
    requester: str
    token_hash: bytes
    tag: str

    def __post_init__(self):
        if self.tag not in QUERY_TAGS:
            raise InvalidArgument(f"query tag must be one of {QUERY_TAGS}")

    def to_record(self) -> dict:
        return {"requester": self.requester, "token_hash": self.token_hash, "tag": self.tag}


@dataclass(frozen=True)
class TraderRegistration:
    did_v: str
    proof_hash: bytes
    status: str
    admin_sig: bytes

    def to_record(self) -> dict:
        return {"DID_v": self.did_v, "proof_hash": self.proof_hash, "status": self.status,
                "admin_sig": self.admin_sig}


@dataclass
class CommodityState:
    cid: str
    owner: str
    history: list = field(default_factory=list)  # LedgerEntry, TX_cr first

    def parties(self) -> set[str]:
        out = set()
        for e in self.history:
            p = e.payload_value()
            out.update(d for d in (p.get("DID_v"), p.get("DID_p_SB"), p.get("DID_p_BS")) if d)
        return out


class TML:
    def __init__(self, idml: IDML, admin_did: str, qsc_did: str, qsc_capability_hash: bytes,
                 clock=None, path: str | os.PathLike | None = None):
        self.idml = idml
        self.admin_did = admin_did
        self.qsc_did = qsc_did
        self.qsc_capability_hash = qsc_capability_hash
        self.clock = clock or LogicalClock()
        self.ledger = Ledger(LEDGER_NAME, self.clock, resolver=self.idml.lookup_verkey,
                             authorizer=self._validate, path=path)
        self._registrations: dict[str, LedgerEntry] = {}
        self._commodities: dict[str, CommodityState] = {}
        self._used: set[str] = set()
        self._executed: dict[bytes, int] = {}
        self._generated: set[bytes] = set()
        # admin-private: enrollment channel -> DID_v list in registration order
        self._enrollment: dict[str, list[str]] = {}
        self._enrolled_by: dict[str, str] = {}
        self._owner_auth: Optional[bytes] = None
        self._bootstrapped = False

    # -- plumbing --------------------------------------------------------------

    def _submit(self, tx_type: str, payload: dict, signer) -> int:
        data = canonical.encode(payload)
        sig = sign_tx(signer, LEDGER_NAME, tx_type, data, signer.did)
        return self.submit_signed(tx_type, data, signer.did, sig)

    def submit_signed(self, tx_type: str, data: bytes, submitter: str, signature: bytes,
                      owner_auth: bytes | None = None) -> int:
        with self.ledger.lock:
            self._owner_auth = owner_auth
            try:
                seq = self.ledger.append(tx_type, data, submitter, signature)
            finally:
                self._owner_auth = None
            entry = self.ledger[seq]
            self._apply(entry, entry.payload_value())
            return seq

    def check_capability(self, capability: bytes | None) -> bool:
        return capability is not None and hashlib.sha256(capability).digest() == self.qsc_capability_hash

    def _require_active(self, did: str) -> None:
        nym = self.idml.lookup_nym(did)
        if nym is None:
            raise Unauthorized(f"{did} unknown on IDML")
        if not nym.active:
            raise DeletedDid(f"{did} has been deleted")

    # -- validation ------------------------------------------------------------

    def _validate(self, tx_type: str, p, submitter: str) -> None:
        if not isinstance(p, dict):
            raise EncodingFailure("payload must be a map")
        if tx_type == GENESIS:
            if self._bootstrapped:
                raise DuplicateRecord("genesis already committed")
            if submitter != self.admin_did or p.get("qsc_capability_hash") != self.qsc_capability_hash:
                raise Unauthorized("genesis must come from the TML admin")
            return
        if not self._bootstrapped:
            raise Unauthorized("TML not bootstrapped")
        if tx_type == TX_REGISTER:
            self._check_register(p, submitter)
        elif tx_type == TX_CR:
            self._check_cr(p, submitter)
        elif tx_type == TX_TR:
            self._check_tr(p, submitter)
        elif tx_type == TX_QUERY:
            if submitter != self.qsc_did:
                raise Unauthorized("query records are written by the QSC")
            QueryTx(p["requester"], p["token_hash"], p["tag"])
        else:
            raise InvalidArgument(f"unknown TML transaction type {tx_type!r}")

    def _check_register(self, p: dict, submitter: str) -> None:
        if submitter != self.admin_did:
            raise Unauthorized("only the TML admin records registrations")
        if p["status"] not in (REGISTERED, REJECTED):
            raise InvalidArgument("bad registration status")
        if p["status"] == REGISTERED and p["DID_v"] in self._registrations:
            raise AlreadyRegistered(f"{p['DID_v']} already registered")
        admin_key = self.idml.lookup_verkey(self.admin_did)
        if not verify_signature(admin_key, p["admin_sig"],
                                registration_preimage(p["DID_v"], p["proof_hash"], p["status"])):
            raise BadSignature("admin signature invalid")

    def _check_cr(self, p: dict, submitter: str) -> None:
        tx = CreateTx.from_record(p)
        if submitter != tx.did_v:
            raise Unauthorized("TX_cr must be submitted by its DID_v")
        if tx.did_v not in self._registrations:
            raise UnregisteredTrader(f"{tx.did_v} is not a registered trader")
        self._require_active(tx.did_v)
        if tx.cid in self._commodities:
            raise DuplicateCid(f"CID {tx.cid} already exists")
        if not verify_signature(self.idml.lookup_verkey(tx.did_v), tx.sig_s, cr_preimage(tx.cid, tx.h_data, tx.did_v)):
            raise BadSignature("Sig_S invalid")
        channel = self._enrolled_by.get(tx.did_v)
        if channel is not None and tx.did_v not in self._used:
            order = self._enrollment[channel]
            k = order.index(tx.did_v)
            if k > 0 and order[k - 1] not in self._used:
                raise UnusedPreviousDid("previous DID_v has not been used in a committed transaction")

    def _check_tr(self, p: dict, submitter: str) -> None:
        tx = TradeTx.from_record(p)
        state = self._commodities.get(tx.cid)
        if state is None:
            raise UnknownCid(tx.cid)
        if submitter != tx.did_p_sb:
            raise Unauthorized("TX_tr must be submitted by the seller pseudonym")
        if tx.did_p_sb == tx.did_p_bs:
            raise InvalidArgument("seller and buyer pseudonyms must differ")
        for did in (tx.did_p_sb, tx.did_p_bs):
            if not self.idml.pseudonym_logged(did):
                raise Unauthorized(f"{did} has no pseudonym-creation record on IDML")
            self._require_active(did)
        self._require_active(state.owner)
        pre = tr_preimage(tx.cid, tx.h_data, tx.did_p_sb, tx.did_p_bs)
        if not verify_signature(self.idml.lookup_verkey(tx.did_p_sb), tx.sig_s, pre):
            raise BadSignature("Sig_S invalid")
        if not verify_signature(self.idml.lookup_verkey(tx.did_p_bs), tx.sig_b, pre):
            raise BadSignature("Sig_B invalid")
        auth = self._owner_auth
        if auth is None or not verify_signature(
                self.idml.lookup_verkey(state.owner), auth,
                owner_auth_preimage(tx.cid, tx.h_data, tx.did_p_sb, tx.did_p_bs)):
            raise NotOwner("seller pseudonym is not linked to the current owner")

    # -- effects ---------------------------------------------------------------

    def _apply(self, entry: LedgerEntry, p: dict) -> None:
        t = entry.tx_type
        if t == GENESIS:
            self._bootstrapped = True
        elif t == TX_REGISTER:
            if p["status"] == REGISTERED:
                self._registrations[p["DID_v"]] = entry
        elif t == TX_CR:
            self._commodities[p["CID"]] = CommodityState(p["CID"], p["DID_v"], [entry])
            self._used.add(p["DID_v"])
        elif t == TX_TR:
            state = self._commodities[p["CID"]]
            state.owner = p["DID_p_BS"]
            state.history.append(entry)
            self._used.update((p["DID_p_SB"], p["DID_p_BS"]))
        elif t == TX_QUERY:
            if p["tag"] == TAG_EXECUTED:
                self._executed[p["token_hash"]] = self._executed.get(p["token_hash"], 0) + 1
            else:
                self._generated.add(p["token_hash"])

    # -- operations ------------------------------------------------------------

    def bootstrap(self, admin_signer, idml_head: bytes | None = None) -> int:
        payload = {"admin_did": self.admin_did, "qsc_did": self.qsc_did,
                   "qsc_capability_hash": self.qsc_capability_hash, "signature_suite": SIGNATURE_SUITE,
                   "idml_genesis": idml_head if idml_head is not None else self.idml.ledger[0].entry_hash}
        return self._submit(GENESIS, payload, admin_signer)

    def enroll(self, channel_did: str, did_v: str) -> None:
        """Admin-private bookkeeping of which DID_v values one trader registered."""
        with self.ledger.lock:
            if did_v in self._enrolled_by:
                return
            self._enrollment.setdefault(channel_did, []).append(did_v)
            self._enrolled_by[did_v] = channel_did

    def record_registration(self, admin_signer, did_v: str, proof_hash: bytes, status: str) -> int:
        sig = admin_signer.sign(registration_preimage(did_v, proof_hash, status))
        return self._submit(TX_REGISTER, TraderRegistration(did_v, proof_hash, status, sig).to_record(),
                            admin_signer)

    def create_commodity(self, tx: CreateTx, signer) -> int:
        return self._submit(TX_CR, tx.to_record(), signer)

    def trade_commodity(self, tx: TradeTx, signer, owner_auth: bytes) -> int:
        data = canonical.encode(tx.to_record())
        sig = sign_tx(signer, LEDGER_NAME, TX_TR, data, signer.did)
        return self.submit_signed(TX_TR, data, signer.did, sig, owner_auth=owner_auth)

    def log_query(self, qsc_signer, qtx: QueryTx) -> int:
        return self._submit(TX_QUERY, qtx.to_record(), qsc_signer)

    # -- reads -----------------------------------------------------------------

    def is_registered(self, did_v: str) -> bool:
        return did_v in self._registrations

    def is_used(self, did: str) -> bool:
        return did in self._used

    def executed_count(self, token_hash: bytes) -> int:
        return self._executed.get(token_hash, 0)

    def was_generated(self, token_hash: bytes) -> bool:
        return token_hash in self._generated

    def commodity_history(self, cid: str, capability: bytes | None = None, requester: str | None = None,
                          signature: bytes | None = None) -> CommodityState:
        with self.ledger.lock:
            state = self._commodities.get(cid)
            if state is None:
                raise UnknownCid(cid)
            if not self.check_capability(capability):
                if requester is None or requester not in state.parties():
                    raise Unauthorized("history is visible to the QSC and the owning traders only")
                key = self.idml.lookup_verkey(requester)
                if signature is None or not verify_signature(key, signature, history_request(cid, requester)):
                    raise Unauthorized("history request not signed by the requester")
            return CommodityState(state.cid, state.owner, list(state.history))

    def scan(self, capability: bytes | None, **filters) -> list[LedgerEntry]:
        """Raw read of the log; the QSC is the only caller allowed."""
        if not self.check_capability(capability):
            raise UnauthorizedCaller("raw TML scan requires the QSC capability")
        return self.ledger.scan(**filters)

    def own_entries(self, did: str, signature: bytes) -> list[LedgerEntry]:
        """Entries submitted by ``did``, for a caller proving control of it."""
        key = self.idml.lookup_verkey(did)
        if key is None or not verify_signature(key, signature, canonical.encode(["own-entries", did])):
            raise Unauthorized("caller does not control this DID")
        return self.ledger.scan(submitter=did)

    def audit(self) -> list[int]:
        """Seqs of TX entries whose embedded signatures do not re-verify against IDML."""
        bad = set(self.ledger.audit_signatures(self.idml.lookup_verkey))
        for e in self.ledger.entries():
            p = e.payload_value()
            if e.tx_type == TX_CR:
                ok = verify_signature(self.idml.lookup_verkey(p["DID_v"]) or b"", p["Sig_S"],
                                      cr_preimage(p["CID"], p["H_data"], p["DID_v"]))
            elif e.tx_type == TX_TR:
                pre = tr_preimage(p["CID"], p["H_data"], p["DID_p_SB"], p["DID_p_BS"])
                ok = verify_signature(self.idml.lookup_verkey(p["DID_p_SB"]) or b"", p["Sig_S"], pre) and \
                    verify_signature(self.idml.lookup_verkey(p["DID_p_BS"]) or b"", p["Sig_B"], pre)
            else:
                continue
            if not ok:
                bad.add(e.seq)
        return sorted(bad)

    def all_dids(self) -> set[str]:
        out = {self.admin_did, self.qsc_did}
        for e in self.ledger.entries():
            p = e.payload_value()
            for key in ("DID_v", "DID_p_SB", "DID_p_BS", "requester", "admin_did", "qsc_did"):
                if isinstance(p.get(key), str):
                    out.add(p[key])
        return out


def replay_owners(entries: Iterable[LedgerEntry]) -> dict[str, str]:
    """Independent ownership interpreter: CID -> owner after the whole log."""
    owners: dict[str, str] = {}
    for e in entries:
        if e.tx_type == TX_CR:
            p = canonical.decode(e.payload)
            owners[p["CID"]] = p["DID_v"]
        elif e.tx_type == TX_TR:
            p = canonical.decode(e.payload)
            owners[p["CID"]] = p["DID_p_BS"]
    return owners

"""Access tokens and the Query Smart Contract (QSC).

A trader grants a requester a signed token.  Its ciphertext hides the wallet
endpoint ``R`` and the granted parameters ``Param_i`` under a CP-ABE policy
that only the QSC key satisfies.  The QSC validates the token, collates the
trader's TML history, joins it with wallet data and returns records with
every DID replaced by a per-query alias.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import random
from dataclasses import dataclass, replace
from typing import Iterable, Optional

from . import canonical
from .agents import Agent, EndpointRegistry
from .cpabe import AbeMasterPublic, AbeUserKey, abe_decrypt, abe_encrypt, as_policy, policy_leaves, \
    policy_satisfied
from .errors import (
    AbeDecryptError,
    EncodingFailure,
    EndpointUnreachable,
    InvalidParams,
    InvalidTimeRange,
    ParamMismatch,
    TokenBadSignature,
    TokenExpired,
    TokenPolicyNotSatisfied,
    UnauthorizedCaller,
    UnknownEndpoint,
    UsesExhausted,
    WrongRequester,
)
from .keys import verify_signature
from .tml import TAG_EXECUTED, TAG_GENERATED, TML, TX_CR, TX_TR, QueryTx

FIELD_UNIVERSE = ("CID", "commodity_type", "quantity", "unit_price", "timestamp", "counterparty_role")
QSC_ROLE = "role:qsc"
ALIAS_PREFIX = "anon-"


@dataclass(frozen=True)
class QueryParams:
    fields: frozenset
    cid: Optional[str] = None
    max_records: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "fields", frozenset(self.fields))
        unknown = self.fields - set(FIELD_UNIVERSE)
        if unknown:
            raise InvalidParams(f"unknown query fields {sorted(unknown)}")
        if self.max_records is not None and (isinstance(self.max_records, bool) or
                                             not isinstance(self.max_records, int) or self.max_records < 0):
            raise InvalidParams("max_records must be a non-negative integer")

    def to_record(self) -> dict:
        return {"fields": sorted(self.fields), "cid": self.cid, "max_records": self.max_records}

    @classmethod
    def from_record(cls, rec: dict) -> "QueryParams":
        try:
            return cls(frozenset(rec["fields"]), rec["cid"], rec["max_records"])
        except (KeyError, TypeError) as exc:
            raise InvalidParams("malformed query parameters") from exc

    def within(self, granted: "QueryParams") -> bool:
        """True if this request asks for no more than ``granted``."""
        if not self.fields <= granted.fields:
            return False
        if granted.cid is not None and self.cid != granted.cid:
            return False
        if granted.max_records is not None and (self.max_records is None or self.max_records > granted.max_records):
            return False
        return True


def params(*fields: str, cid: str | None = None, max_records: int | None = None) -> QueryParams:
    return QueryParams(frozenset(fields), cid, max_records)


@dataclass(frozen=True)
class AccessToken:
    token_id: str
    ct: bytes
    param_j: QueryParams
    time: tuple[int, int]
    expiry: int
    max_uses: int
    requester: str
    issuer_did: str
    token_sig: bytes = b""

    def unsigned_record(self) -> dict:
        return {"ID_token": self.token_id, "ct": self.ct, "Param_j": self.param_j.to_record(),
                "Time": list(self.time), "validity": {"expiry": self.expiry, "max_uses": self.max_uses},
                "ID_j": self.requester, "issuer": self.issuer_did}

    def to_record(self) -> dict:
        return {**self.unsigned_record(), "token_sig": self.token_sig}

    @classmethod
    def from_record(cls, rec: dict) -> "AccessToken":
        try:
            return cls(rec["ID_token"], rec["ct"], QueryParams.from_record(rec["Param_j"]), tuple(rec["Time"]),
                       rec["validity"]["expiry"], rec["validity"]["max_uses"], rec["ID_j"], rec["issuer"],
                       rec["token_sig"])
        except (KeyError, TypeError, ValueError) as exc:
            raise EncodingFailure("malformed token") from exc

    def to_bytes(self) -> bytes:
        return canonical.encode(self.to_record())

    @classmethod
    def from_bytes(cls, data: bytes) -> "AccessToken":
        return cls.from_record(canonical.decode(data))

    def armor(self) -> str:
        return base64.b64encode(self.to_bytes()).decode("ascii")

    @classmethod
    def unarmor(cls, text: str) -> "AccessToken":
        try:
            raw = base64.b64decode(text.strip(), validate=True)
        except ValueError as exc:
            raise EncodingFailure("token is not base64") from exc
        return cls.from_bytes(raw)


def token_hash(token: AccessToken) -> bytes:
    return hashlib.sha256(canonical.encode(token.unsigned_record())).digest()


def requester_message(token: AccessToken) -> bytes:
    """What the requester signs to show it controls ``ID_j``."""
    return canonical.encode(["query", token_hash(token)])


@dataclass(frozen=True)
class QueryRecord:
    fields: dict
    parties: tuple[str, ...]  # aliases of the trader's DID, then the counterparty's

    def to_record(self) -> dict:
        return {"fields": dict(self.fields), "parties": list(self.parties)}


@dataclass(frozen=True)
class QueryResult:
    records: tuple[QueryRecord, ...]
    token_hash: bytes
    log_seq: int

    @property
    def count(self) -> int:
        return len(self.records)

    def to_record(self) -> dict:
        return {"records": [r.to_record() for r in self.records], "token_hash": self.token_hash,
                "count": self.count}

    def to_bytes(self) -> bytes:
        return canonical.encode(self.to_record())


def _require_qsc(policy) -> None:
    others = set(policy_leaves(policy)) - {QSC_ROLE}
    if QSC_ROLE not in policy_leaves(policy) or policy_satisfied(policy, others):
        raise InvalidParams("token policy must require role:qsc")


class QSC:
    """Query Smart Contract.  Holds the only key with ``role:qsc``."""

    def __init__(self, agent: Agent, tml: TML, abe_key: AbeUserKey, capability: bytes,
                 registry: EndpointRegistry, rng: random.Random):
        if QSC_ROLE not in abe_key.attributes:
            raise InvalidParams("QSC key must carry role:qsc")
        self.agent = agent
        self.tml = tml
        self.abe_key = abe_key
        self._capability = capability
        self.registry = registry
        self.rng = rng

    @property
    def did(self) -> str:
        return self.agent.verinym

    @property
    def signer(self):
        return self.agent.wallet.signer(self.did)

    # -- issuance ------------------------------------------------------------------

    def record_issued(self, token: AccessToken) -> int:
        self._check_signature(token)
        return self.tml.log_query(self.signer, QueryTx(token.requester, token_hash(token), TAG_GENERATED))

    # -- validation ----------------------------------------------------------------

    def _check_signature(self, token: AccessToken) -> None:
        key = self.tml.idml.lookup_verkey(token.issuer_did)
        if key is None or not verify_signature(key, token.token_sig, canonical.encode(
                ["token", token_hash(token)])):
            raise TokenBadSignature("token signature does not verify")

    def validate_token(self, token: AccessToken, requester_did: str, requester_sig: bytes,
                       now: int) -> tuple[str, QueryParams]:
        """Returns the decrypted ``(R, Param_i)`` or raises a ``TokenRejected``."""
        self._check_signature(token)
        th = token_hash(token)
        key = self.tml.idml.lookup_verkey(requester_did)
        if requester_did != token.requester or key is None or \
                not verify_signature(key, requester_sig, requester_message(token)):
            raise WrongRequester("caller is not the token's requester")
        if now > token.expiry:
            raise TokenExpired("token validity has lapsed")
        if self.tml.executed_count(th) >= token.max_uses:
            raise UsesExhausted(f"token already used {token.max_uses} times")
        try:
            inner = canonical.decode(abe_decrypt(self.abe_key, token.ct))
            R, param_i = inner["R"], QueryParams.from_record(inner["Param_i"])
        except (AbeDecryptError, EncodingFailure, KeyError, TypeError, InvalidParams) as exc:
            raise TokenPolicyNotSatisfied("QSC cannot open the token ciphertext") from exc
        if not token.param_j.within(param_i):
            raise ParamMismatch("Param_j asks for more than Param_i grants")
        return R, param_i

    # -- execution -----------------------------------------------------------------

    def _collect(self, R: str, granted: QueryParams, asked: QueryParams, time_range: tuple[int, int]) -> list:
        try:
            did_set = {d["did"] for d in self.registry.resolve_endpoint(R, self._capability)}
        except (UnknownEndpoint, UnauthorizedCaller) as exc:
            raise EndpointUnreachable(f"wallet endpoint {R} unreachable") from exc
        start, end = time_range
        cid = asked.cid if asked.cid is not None else granted.cid

        def involves(e):
            p = e.payload_value()
            if cid is not None and p["CID"] != cid:
                return False
            return bool(did_set & {p.get("DID_v"), p.get("DID_p_SB"), p.get("DID_p_BS")})

        entries = self.tml.scan(self._capability, tx_type=(TX_CR, TX_TR), start=start, end=end, predicate=involves)
        caps = [c for c in (granted.max_records, asked.max_records) if c is not None]
        if caps:
            entries = entries[:min(caps)]
        return [(e, did_set) for e in entries]

    def _project(self, R: str, entry, did_set: set, fields: frozenset, salt: bytes) -> QueryRecord:
        p = entry.payload_value()
        if entry.tx_type == TX_CR:
            mine, other, role = p["DID_v"], None, "none"
        elif p["DID_p_SB"] in did_set:
            mine, other, role = p["DID_p_SB"], p["DID_p_BS"], "buyer"
        else:
            mine, other, role = p["DID_p_BS"], p["DID_p_SB"], "seller"
        data = {}
        if fields & {"commodity_type", "quantity", "unit_price"}:
            preimage = self.registry.fetch_data(R, self._capability, p["H_data"])
            if preimage is None or hashlib.sha256(preimage).digest() != p["H_data"]:
                raise EndpointUnreachable("wallet data missing or inconsistent with H_data")
            data = canonical.decode(preimage)
        full = {"CID": p["CID"], "timestamp": entry.timestamp, "counterparty_role": role,
                "commodity_type": data.get("commodity_type"), "quantity": data.get("quantity"),
                "unit_price": data.get("unit_price")}

        def alias(did: str) -> str:
            return ALIAS_PREFIX + hmac.new(salt, did.encode(), hashlib.sha256).hexdigest()[:24]

        parties = (alias(mine),) + ((alias(other),) if other else ())
        return QueryRecord({k: full[k] for k in sorted(fields)}, parties)

    def retrieve(self, token: AccessToken, requester_did: str, requester_sig: bytes, now: int):
        """Validate and collect matching TML entries without filtering them."""
        R, granted = self.validate_token(token, requester_did, requester_sig, now)
        return R, granted, self._collect(R, granted, token.param_j, token.time)

    def evaluate(self, token: AccessToken, requester_did: str, requester_sig: bytes,
                 now: int) -> tuple[QueryRecord, ...]:
        """The read side of a query: validate, collect, project and alias."""
        R, granted, matched = self.retrieve(token, requester_did, requester_sig, now)
        fields = granted.fields & token.param_j.fields
        salt = self.rng.getrandbits(256).to_bytes(32, "big")
        return tuple(self._project(R, e, ds, fields, salt) for e, ds in matched)

    def execute_query(self, token: AccessToken, requester_did: str, requester_sig: bytes,
                      now: int | None = None) -> QueryResult:
        now = self.tml.clock.peek() if now is None else now
        records = self.evaluate(token, requester_did, requester_sig, now)
        th = token_hash(token)
        with self.tml.ledger.lock:
            # recheck under the write lock so concurrent uses cannot overspend
            if self.tml.executed_count(th) >= token.max_uses:
                raise UsesExhausted(f"token already used {token.max_uses} times")
            seq = self.tml.log_query(self.signer, QueryTx(requester_did, th, TAG_EXECUTED))
        return QueryResult(records, th, seq)


def issue_token(trader: Agent, registry: EndpointRegistry, qsc: QSC, requester_did: str,
                param_i: QueryParams, param_j: QueryParams, time_range: tuple[int, int], expiry: int,
                max_uses: int, policy, master_public: AbeMasterPublic, issuer_did: str | None = None,
                token_id: str | None = None) -> AccessToken:
    start, end = time_range
    if start > end:
        raise InvalidTimeRange("Time.start must not exceed Time.end")
    if isinstance(max_uses, bool) or not isinstance(max_uses, int) or max_uses < 1:
        raise InvalidParams("max_uses must be at least 1")
    policy = as_policy(policy)
    _require_qsc(policy)
    R = registry.register(trader.wallet)
    ct = abe_encrypt(master_public, policy, canonical.encode({"R": R, "Param_i": param_i.to_record()}), trader.rng)
    token = AccessToken(token_id or "tok-" + trader.rng.getrandbits(96).to_bytes(12, "big").hex(),
                        ct.to_bytes(), param_j, (start, end), expiry, max_uses, requester_did,
                        issuer_did or trader.verinym)
    sig = trader.wallet.sign(token.issuer_did, canonical.encode(["token", token_hash(token)]))
    token = replace(token, token_sig=sig)
    qsc.record_issued(token)
    return token


def sign_request(requester: Agent, token: AccessToken, did: str | None = None) -> bytes:
    return requester.wallet.sign(did or requester.verinym, requester_message(token))


def find_did_substrings(blob: bytes, dids: Iterable[str]) -> list[str]:
    """DIDs whose text occurs anywhere in ``blob``."""
    return sorted(d for d in set(dids) if d.encode() in blob)

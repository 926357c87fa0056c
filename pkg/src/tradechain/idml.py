"""Identity Management Ledger.

Open read, role-gated write.  Holds verinyms, pseudonym-creation events,
schemas, credential definitions, DID status tags and the revocation registry.
Every write goes through :meth:`IDML.submit`, which validates against the
current state under the ledger lock and applies the effect only once the
entry is committed.
"""

from __future__ import annotations

import hashlib
import os
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional, Protocol

from . import canonical
from .anoncreds import CredentialDefinition, Schema
from .errors import (
    DuplicateDid,
    DuplicateRecord,
    EncodingFailure,
    InsufficientRole,
    InvalidArgument,
    NotIssuer,
    QuotaExceeded,
    RevocationMonotonicity,
    Unauthorized,
    UnknownCredDef,
    UnknownSchema,
)
from .keys import SIGNATURE_SUITE, verify_signature
from .ledger_core import GENESIS, Ledger, LedgerEntry, LogicalClock, sign_tx, signing_preimage

LEDGER_NAME = "IDML"
DID_PREFIX = "did:tc:"

TX_NYM = "NYM"
TX_PSEUDONYM = "PSEUDONYM"
TX_SCHEMA = "SCHEMA"
TX_CRED_DEF = "CRED_DEF"
TX_REVOCATION = "REVOCATION"
TX_DID_STATUS = "DID_STATUS"

VERINYM = "verinym"
PSEUDONYM = "pseudonym"
ACTIVE = "active"
DELETED = "deleted"

SCHEMA_PRIVILEGE = "schema"


class Role(str, Enum):
    STEWARD = "STEWARD"
    TRUST_ANCHOR = "TRUST_ANCHOR"
    TRADER = "TRADER"
    NONE = "NONE"

    @property
    def rank(self) -> int:
        return _RANK[self]


_RANK = {Role.NONE: 0, Role.TRADER: 1, Role.TRUST_ANCHOR: 2, Role.STEWARD: 3}


def derive_did(verkey: bytes) -> str:
    return DID_PREFIX + hashlib.sha256(bytes(verkey)).digest()[:16].hex()


def control_message(did: str, verkey: bytes, purpose: str) -> bytes:
    """What the key holder of ``did`` signs to prove control for ``purpose``."""
    return canonical.encode(["did-control", purpose, did, bytes(verkey)])


class Signer(Protocol):
    did: str

    def sign(self, message: bytes) -> bytes: ...


@dataclass(frozen=True)
class GenesisConfig:
    network: str
    steward_did: str
    steward_verkey: bytes
    steward_endpoint: str = "steward"
    signature_suite: str = SIGNATURE_SUITE
    pseudonym_quota: int = 100
    quota_window_ms: int = 24 * 3600 * 1000
    roles: tuple[str, ...] = tuple(r.value for r in Role)

    def __post_init__(self):
        if self.signature_suite != SIGNATURE_SUITE:
            raise InvalidArgument(f"unsupported signature suite {self.signature_suite!r}")
        if derive_did(self.steward_verkey) != self.steward_did:
            raise InvalidArgument("steward DID does not match its verkey")
        if self.pseudonym_quota < 1 or self.quota_window_ms < 1:
            raise InvalidArgument("quota and window must be positive")

    def to_record(self) -> dict:
        return {"network": self.network, "steward_did": self.steward_did,
                "steward_verkey": self.steward_verkey, "steward_endpoint": self.steward_endpoint,
                "signature_suite": self.signature_suite, "pseudonym_quota": self.pseudonym_quota,
                "quota_window_ms": self.quota_window_ms, "roles": list(self.roles)}

    @classmethod
    def from_record(cls, rec: dict) -> "GenesisConfig":
        return cls(**{**rec, "roles": tuple(rec["roles"])})

    def to_text(self) -> str:
        lines = [
            f"network = {self.network}",
            f"signature_suite = {self.signature_suite}",
            f"steward_did = {self.steward_did}",
            f"steward_verkey = {self.steward_verkey.hex()}",
            f"steward_endpoint = {self.steward_endpoint}",
            f"roles = {','.join(self.roles)}",
            f"pseudonym_quota = {self.pseudonym_quota}",
            f"quota_window_ms = {self.quota_window_ms}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GenesisConfig":
        values: dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise InvalidArgument(f"genesis line {lineno}: expected key = value")
            values[key.strip()] = value.strip()
        try:
            return cls(
                network=values["network"],
                steward_did=values["steward_did"],
                steward_verkey=bytes.fromhex(values["steward_verkey"]),
                steward_endpoint=values.get("steward_endpoint", "steward"),
                signature_suite=values.get("signature_suite", SIGNATURE_SUITE),
                pseudonym_quota=int(values.get("pseudonym_quota", 100)),
                quota_window_ms=int(values.get("quota_window_ms", 24 * 3600 * 1000)),
                roles=tuple(r.strip() for r in values.get("roles", ",".join(r.value for r in Role)).split(",")),
            )
        except KeyError as exc:
            raise InvalidArgument(f"genesis config missing {exc.args[0]}") from exc


@dataclass(frozen=True)
class NymRecord:
    did: str
    verkey: bytes
    role: Role
    did_kind: str
    status: str = ACTIVE
    endpoint: Optional[str] = None
    privileges: tuple[str, ...] = ()
    seq: int = -1

    @property
    def active(self) -> bool:
        return self.status == ACTIVE


@dataclass(frozen=True)
class RevocationRecord:
    cred_def_id: str
    index: int
    revoked: bool


class IDML:
    def __init__(self, genesis: GenesisConfig, clock=None, path: str | os.PathLike | None = None):
        self.genesis = genesis
        self.clock = clock or LogicalClock()
        self.ledger = Ledger(LEDGER_NAME, self.clock, resolver=self._resolve_submitter,
                             authorizer=self._validate, path=path)
        self._nyms: dict[str, NymRecord] = {}
        self._schemas: dict[str, Schema] = {}
        self._cred_defs: dict[str, CredentialDefinition] = {}
        self._revoked: set[tuple[str, int]] = set()
        self._quota: dict[str, deque] = defaultdict(deque)
        self._bootstrapped = False

    # -- plumbing ------------------------------------------------------------

    def _resolve_submitter(self, did: str) -> Optional[bytes]:
        if not self._bootstrapped:
            return self.genesis.steward_verkey if did == self.genesis.steward_did else None
        rec = self._nyms.get(did)
        return rec.verkey if rec is not None and rec.active else None

    def submit(self, tx_type: str, payload: dict, signer: Signer) -> int:
        """Sign ``payload`` as ``signer`` and commit it if the state machine agrees."""
        data = canonical.encode(payload)
        signature = sign_tx(signer, LEDGER_NAME, tx_type, data, signer.did)
        return self.submit_signed(tx_type, data, signer.did, signature)

    def submit_signed(self, tx_type: str, data: bytes, submitter: str, signature: bytes) -> int:
        with self.ledger.lock:
            seq = self.ledger.append(tx_type, data, submitter, signature)
            entry = self.ledger[seq]
            self._apply(entry.tx_type, entry.payload_value(), entry.submitter, entry.timestamp, seq)
            return seq

    def _role_of(self, did: str) -> Role:
        rec = self._nyms.get(did)
        if rec is None or not rec.active:
            return Role.NONE
        return rec.role

    def _quota_count(self, submitter: str, now: int) -> int:
        window = self._quota[submitter]
        while window and window[0] <= now - self.genesis.quota_window_ms:
            window.popleft()
        return len(window)

    # -- validation ------------------------------------------------------------

    def _validate(self, tx_type: str, p, submitter: str) -> None:
        if not isinstance(p, dict):
            raise EncodingFailure("payload must be a map")
        if tx_type == GENESIS:
            if self._bootstrapped or len(self.ledger):
                raise DuplicateRecord("genesis already committed")
            if p.get("config") != self.genesis.to_record():
                raise InvalidArgument("genesis payload does not match config")
            return
        if not self._bootstrapped:
            raise Unauthorized("ledger not bootstrapped")
        handler = {
            TX_NYM: self._check_nym,
            TX_PSEUDONYM: self._check_pseudonym,
            TX_SCHEMA: self._check_schema,
            TX_CRED_DEF: self._check_cred_def,
            TX_REVOCATION: self._check_revocation,
            TX_DID_STATUS: self._check_status,
        }.get(tx_type)
        if handler is None:
            raise InvalidArgument(f"unknown IDML transaction type {tx_type!r}")
        handler(p, submitter)

    def _check_new_did(self, did: str, verkey: bytes) -> None:
        if derive_did(verkey) != did:
            raise InvalidArgument("DID is not derived from its verkey")
        if did in self._nyms:
            raise DuplicateDid(f"{did} already on ledger")

    def _check_nym(self, p: dict, submitter: str) -> None:
        role = Role(p["role"])
        self._check_new_did(p["did"], p["verkey"])
        mine = self._role_of(submitter)
        if mine.rank < Role.TRUST_ANCHOR.rank:
            raise InsufficientRole("registering verinyms needs TRUST_ANCHOR or above")
        if role.rank >= mine.rank:
            raise InsufficientRole(f"{mine.value} cannot grant {role.value}")
        if p.get("privileges") and mine is not Role.STEWARD:
            raise InsufficientRole("only the Steward grants privileges")
        if not verify_signature(p["verkey"], p["control_sig"], control_message(p["did"], p["verkey"], TX_NYM)):
            raise Unauthorized("target DID did not consent to registration")

    def _check_pseudonym(self, p: dict, submitter: str) -> None:
        self._check_new_did(p["did"], p["verkey"])
        if not verify_signature(p["verkey"], p["control_sig"],
                                control_message(p["did"], p["verkey"], TX_PSEUDONYM)):
            raise Unauthorized("pseudonym creation lacks a control signature")
        if submitter != self.genesis.steward_did and self._quota_count(submitter, self.clock.peek()) >= self.genesis.pseudonym_quota:
            raise QuotaExceeded(f"pseudonym quota of {self.genesis.pseudonym_quota} reached")

    def _check_schema(self, p: dict, submitter: str) -> None:
        rec = self._nyms.get(submitter)
        if rec is None or rec.role is not Role.TRUST_ANCHOR or SCHEMA_PRIVILEGE not in rec.privileges:
            raise InsufficientRole("schemas are published by the schema authority")
        schema = Schema.from_record(p["schema"])
        if schema.id in self._schemas:
            raise DuplicateRecord(f"schema {schema.id} already published")

    def _check_cred_def(self, p: dict, submitter: str) -> None:
        cd = CredentialDefinition.from_record(p["cred_def"])
        if self._role_of(submitter) is not Role.TRUST_ANCHOR:
            raise InsufficientRole("credential definitions need a TRUST_ANCHOR issuer")
        if cd.issuer_did != submitter:
            raise InsufficientRole("issuer_did must be the submitter")
        schema = self._schemas.get(cd.schema_ref)
        if schema is None:
            raise UnknownSchema(cd.schema_ref)
        if schema.attribute_names != cd.schema_attribute_names:
            raise InvalidArgument("credential definition disagrees with its schema")
        if cd.id in self._cred_defs:
            raise DuplicateRecord(f"{cd.id} already published")

    def _check_revocation(self, p: dict, submitter: str) -> None:
        cd = self._cred_defs.get(p["cred_def_id"])
        if cd is None:
            raise UnknownCredDef(p["cred_def_id"])
        if submitter not in (cd.issuer_did, self.genesis.steward_did):
            raise NotIssuer("only the issuer (or Steward) may revoke")
        if p["revoked"] is not True:
            raise RevocationMonotonicity("revocation cannot be undone")
        if not isinstance(p["index"], int) or isinstance(p["index"], bool) or p["index"] < 0:
            raise InvalidArgument("bad credential index")

    def _check_status(self, p: dict, submitter: str) -> None:
        rec = self._nyms.get(p["did"])
        if rec is None:
            raise InvalidArgument(f"unknown DID {p['did']}")
        if p["status"] != DELETED:
            raise InvalidArgument("only the deleted tag is supported")
        if submitter not in (p["did"], self.genesis.steward_did):
            raise Unauthorized("status tags come from the DID itself or the Steward")
        if not verify_signature(rec.verkey, p["control_sig"], control_message(rec.did, rec.verkey, TX_DID_STATUS)):
            raise Unauthorized("owner did not approve the deletion")

    # -- effects ---------------------------------------------------------------

    def _apply(self, tx_type: str, p: dict, submitter: str, timestamp: int, seq: int) -> None:
        if tx_type == GENESIS:
            s = p["steward"]
            self._nyms[s["did"]] = NymRecord(s["did"], s["verkey"], Role.STEWARD, VERINYM,
                                             endpoint=s["endpoint"], seq=seq)
            self._bootstrapped = True
        elif tx_type == TX_NYM:
            self._nyms[p["did"]] = NymRecord(p["did"], p["verkey"], Role(p["role"]), VERINYM,
                                             endpoint=p.get("endpoint"),
                                             privileges=tuple(p.get("privileges", ())), seq=seq)
        elif tx_type == TX_PSEUDONYM:
            self._nyms[p["did"]] = NymRecord(p["did"], p["verkey"], Role.NONE, PSEUDONYM, seq=seq)
            self._quota[submitter].append(timestamp)
        elif tx_type == TX_SCHEMA:
            schema = Schema.from_record(p["schema"])
            self._schemas[schema.id] = schema
        elif tx_type == TX_CRED_DEF:
            cd = CredentialDefinition.from_record(p["cred_def"])
            self._cred_defs[cd.id] = cd
        elif tx_type == TX_REVOCATION:
            self._revoked.add((p["cred_def_id"], p["index"]))
        elif tx_type == TX_DID_STATUS:
            self._nyms[p["did"]] = replace(self._nyms[p["did"]], status=p["status"])

    # -- operations ------------------------------------------------------------

    def bootstrap(self, steward: Signer) -> int:
        if steward.did != self.genesis.steward_did:
            raise Unauthorized("only the genesis Steward bootstraps")
        payload = {"config": self.genesis.to_record(),
                   "steward": {"did": self.genesis.steward_did, "verkey": self.genesis.steward_verkey,
                               "endpoint": self.genesis.steward_endpoint}}
        return self.submit(GENESIS, payload, steward)

    def register_nym(self, submitter: Signer, target_did: str, verkey: bytes, role: Role, control_sig: bytes,
                     endpoint: str | None = None, privileges: Iterable[str] = ()) -> int:
        payload = {"did": target_did, "verkey": bytes(verkey), "role": Role(role).value,
                   "endpoint": endpoint, "privileges": sorted(privileges), "control_sig": control_sig}
        return self.submit(TX_NYM, payload, submitter)

    def log_pseudonym(self, submitter: Signer, did: str, verkey: bytes, control_sig: bytes) -> int:
        """Record that a pseudonym was created.  The payload names only the pseudonym."""
        payload = {"did": did, "verkey": bytes(verkey), "control_sig": control_sig}
        return self.submit(TX_PSEUDONYM, payload, submitter)

    def publish_schema(self, submitter: Signer, schema: Schema) -> str:
        self.submit(TX_SCHEMA, {"schema": schema.to_record()}, submitter)
        return schema.id

    def publish_cred_def(self, submitter: Signer, cred_def: CredentialDefinition) -> str:
        self.submit(TX_CRED_DEF, {"cred_def": cred_def.to_record()}, submitter)
        return cred_def.id

    def set_revocation(self, submitter: Signer, cred_def_id: str, index: int, revoked: bool = True) -> int:
        return self.submit(TX_REVOCATION, {"cred_def_id": cred_def_id, "index": index, "revoked": revoked},
                           submitter)

    def tag_deleted(self, submitter: Signer, did: str, control_sig: bytes) -> int:
        return self.submit(TX_DID_STATUS, {"did": did, "status": DELETED, "control_sig": control_sig}, submitter)

    # -- lookups (open read) ---------------------------------------------------

    def lookup_nym(self, did: str) -> Optional[NymRecord]:
        return self._nyms.get(did)

    def lookup_verkey(self, did: str) -> Optional[bytes]:
        rec = self._nyms.get(did)
        return rec.verkey if rec is not None else None

    def lookup_schema(self, schema_id: str) -> Optional[Schema]:
        return self._schemas.get(schema_id)

    def lookup_cred_def(self, cred_def_id: str) -> Optional[CredentialDefinition]:
        return self._cred_defs.get(cred_def_id)

    def lookup_revocation(self, cred_def_id: str, index: int) -> bool:
        return (cred_def_id, index) in self._revoked

    def quota_remaining(self, submitter: str) -> int:
        with self.ledger.lock:
            return self.genesis.pseudonym_quota - self._quota_count(submitter, self.clock.peek())

    def all_dids(self) -> list[str]:
        return list(self._nyms)

    def pseudonym_logged(self, did: str) -> bool:
        rec = self._nyms.get(did)
        return rec is not None and rec.did_kind == PSEUDONYM

    # -- persistence -------------------------------------------------------------

    @classmethod
    def replay(cls, genesis: GenesisConfig, entries: Iterable[LedgerEntry], clock=None) -> "IDML":
        """Rebuild state from an export, re-validating every entry."""
        idml = cls(genesis, clock)
        for entry in entries:
            idml.clock_to(entry.timestamp)
            idml.submit_signed(entry.tx_type, entry.payload, entry.submitter, entry.signature)
        return idml

    def clock_to(self, timestamp: int) -> None:
        """Move a logical clock so the next reading equals ``timestamp``."""
        if isinstance(self.clock, LogicalClock):
            delta = timestamp - self.clock.peek() - self.clock.tick_ms
            if delta:
                self.clock.advance(delta)

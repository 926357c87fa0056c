"""Off-chain wallets.

A wallet is an append-only log of typed records.  Nothing is ever removed:
status changes, peer bindings and "used" markers are further records, and the
in-memory views are folded from the log.  Private keys live only here; other
components get a :class:`DidSigner` that signs on the wallet's behalf.
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional

from . import canonical
from .anoncreds import Credential, MasterSecret
from .crypto_math import SecurityProfile
from .errors import DecryptionFailure, EncodingFailure, InvalidArgument
from .idml import ACTIVE, DELETED, PSEUDONYM, VERINYM, control_message, derive_did
from .keys import AgreementKey, SigningKey, open_seal

RECORD_FILE = "records.log"


@dataclass(frozen=True)
class DidRecord:
    did: str
    kind: str
    signing: SigningKey = field(repr=False)
    agreement: AgreementKey = field(repr=False)
    peer: Optional[str] = None
    status: str = ACTIVE
    used: bool = False

    @property
    def verkey(self) -> bytes:
        return self.signing.verkey

    @property
    def agreement_key(self) -> bytes:
        return self.agreement.public

    def public_view(self) -> dict:
        return {"did": self.did, "kind": self.kind, "verkey": self.verkey, "peer": self.peer,
                "status": self.status, "used": self.used}


@dataclass(frozen=True)
class Connection:
    my_did: str
    their_did: str
    their_verkey: bytes
    their_agreement_key: bytes
    label: str = ""
    nonces: tuple[int, ...] = ()

    def to_record(self) -> dict:
        return {"my_did": self.my_did, "their_did": self.their_did, "their_verkey": self.their_verkey,
                "their_agreement_key": self.their_agreement_key, "label": self.label,
                "nonces": list(self.nonces)}

    @classmethod
    def from_record(cls, rec: dict) -> "Connection":
        return cls(**{**rec, "nonces": tuple(rec["nonces"])})


class DidSigner:
    """Signs as one wallet DID without exposing the key."""

    __slots__ = ("did", "_wallet")

    def __init__(self, wallet: "Wallet", did: str):
        self.did = did
        self._wallet = wallet

    def sign(self, message: bytes) -> bytes:
        return self._wallet.sign(self.did, message)

    @property
    def verkey(self) -> bytes:
        return self._wallet.did(self.did).verkey


class Wallet:
    def __init__(self, owner: str, profile: SecurityProfile, rng: random.Random,
                 directory: str | os.PathLike | None = None):
        self.owner = owner
        self.profile = profile
        self.rng = rng
        self.directory = Path(directory) if directory is not None else None
        self._records: list[tuple[str, dict]] = []
        self._dids: dict[str, DidRecord] = {}
        self._connections: list[Connection] = []
        self._credentials: list[Credential] = []
        self._data: dict[bytes, bytes] = {}
        self._master: Optional[MasterSecret] = None
        self.endpoint_id: Optional[str] = None
        self._fh = None
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.directory / RECORD_FILE, "a", encoding="ascii")

    # -- log ---------------------------------------------------------------

    def _append(self, kind: str, data: dict) -> None:
        self._fold(kind, data)
        self._records.append((kind, data))
        if self._fh is not None:
            self._fh.write(canonical.encode([kind, data]).hex() + "\n")
            self._fh.flush()

    def _fold(self, kind: str, d: dict) -> None:
        if kind == "master_secret":
            self._master = MasterSecret(d["m1"])
        elif kind == "did":
            rec = DidRecord(d["did"], d["kind"], SigningKey(d["signing_seed"]), AgreementKey(d["agreement_seed"]),
                            peer=d["peer"])
            if rec.did in self._dids:
                raise InvalidArgument(f"duplicate DID {rec.did} in wallet")
            self._dids[rec.did] = rec
        elif kind == "did_status":
            self._dids[d["did"]] = replace(self._dids[d["did"]], status=d["status"])
        elif kind == "did_used":
            self._dids[d["did"]] = replace(self._dids[d["did"]], used=True)
        elif kind == "did_peer":
            self._dids[d["did"]] = replace(self._dids[d["did"]], peer=d["peer"])
        elif kind == "connection":
            self._connections.append(Connection.from_record(d))
        elif kind == "credential":
            self._credentials.append(Credential.from_record(d))
        elif kind == "data":
            self._data[d["h"]] = d["preimage"]
        elif kind == "endpoint":
            self.endpoint_id = d["R"]
        else:
            raise EncodingFailure(f"unknown wallet record {kind!r}")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    @classmethod
    def load(cls, owner: str, profile: SecurityProfile, rng: random.Random,
             directory: str | os.PathLike) -> "Wallet":
        directory = Path(directory)
        lines = (directory / RECORD_FILE).read_text(encoding="ascii").splitlines()
        wallet = cls(owner, profile, rng)
        for line in lines:
            if line.strip():
                kind, data = canonical.decode(bytes.fromhex(line))
                wallet._append(kind, data)
        wallet.directory = directory
        wallet._fh = open(directory / RECORD_FILE, "a", encoding="ascii")
        return wallet

    @property
    def record_count(self) -> int:
        return len(self._records)

    def public_export(self) -> list[dict]:
        """non-secret view of every DID, for audits"""
        return [d.public_view() for d in self._dids.values()]

    # -- DIDs --------------------------------------------------------------

    def gen_did(self, kind: str, peer: str | None = None) -> DidRecord:
        if kind not in (VERINYM, PSEUDONYM):
            raise InvalidArgument(f"unknown DID kind {kind!r}")
        if kind == PSEUDONYM and not peer:
            raise InvalidArgument("a pseudonym needs a peer")
        signing = SigningKey.generate(self.rng)
        agreement = AgreementKey.generate(self.rng)
        did = derive_did(signing.verkey)
        self._append("did", {"did": did, "kind": kind, "signing_seed": signing.seed(),
                             "agreement_seed": agreement.seed(), "peer": peer})
        return self._dids[did]

    def did(self, did: str) -> DidRecord:
        try:
            return self._dids[did]
        except KeyError:
            raise InvalidArgument(f"{did} is not in {self.owner}'s wallet") from None

    def has_did(self, did: str) -> bool:
        return did in self._dids

    def dids(self, kind: str | None = None) -> list[DidRecord]:
        return [d for d in self._dids.values() if kind is None or d.kind == kind]

    def signer(self, did: str) -> DidSigner:
        self.did(did)
        return DidSigner(self, did)

    def sign(self, did: str, message: bytes) -> bytes:
        return self.did(did).signing.sign(message)

    def control_sig(self, did: str, purpose: str) -> bytes:
        rec = self.did(did)
        return rec.signing.sign(control_message(did, rec.verkey, purpose))

    def set_peer(self, did: str, peer: str) -> None:
        self.did(did)
        self._append("did_peer", {"did": did, "peer": peer})

    def mark_used(self, did: str) -> None:
        if not self.did(did).used:
            self._append("did_used", {"did": did})

    def tag_deleted(self, did: str) -> None:
        if self.did(did).status != DELETED:
            self._append("did_status", {"did": did, "status": DELETED})

    def open_sealed(self, sealed: bytes, did: str | None = None) -> bytes:
        candidates = [self.did(did)] if did is not None else list(self._dids.values())
        for rec in candidates:
            try:
                return open_seal(rec.agreement, sealed)
            except DecryptionFailure:
                continue
        raise DecryptionFailure("no wallet key opens this message")

    # -- master secret, credentials -----------------------------------------

    @property
    def master_secret(self) -> MasterSecret:
        if self._master is None:
            self._append("master_secret", {"m1": MasterSecret.generate(self.profile, self.rng).m1})
        return self._master

    def store_credential(self, credential: Credential) -> None:
        self._append("credential", credential.to_record())

    def credentials(self, cred_def_id: str | None = None) -> list[Credential]:
        return [c for c in self._credentials if cred_def_id is None or c.cred_def_id == cred_def_id]

    # -- connections ---------------------------------------------------------

    def add_connection(self, conn: Connection) -> None:
        self._append("connection", conn.to_record())

    def connections(self) -> list[Connection]:
        return list(self._connections)

    def connection_to(self, their_did: str) -> Optional[Connection]:
        for c in reversed(self._connections):
            if c.their_did == their_did:
                return c
        return None

    def connection_from(self, my_did: str) -> Optional[Connection]:
        for c in reversed(self._connections):
            if c.my_did == my_did:
                return c
        return None

    # -- commodity data ---------------------------------------------------------

    def store_data(self, h_data: bytes, preimage: bytes) -> None:
        if h_data not in self._data:
            self._append("data", {"h": h_data, "preimage": preimage})

    def data(self, h_data: bytes) -> Optional[bytes]:
        return self._data.get(h_data)

    def set_endpoint(self, R: str) -> None:
        self._append("endpoint", {"R": R})

    def __iter__(self) -> Iterator[tuple[str, dict]]:
        return iter(list(self._records))


def create_wallet(owner: str, profile: SecurityProfile, rng: random.Random,
                  directory: str | os.PathLike | None = None) -> Wallet:
    wallet = Wallet(owner, profile, rng, directory)
    wallet.master_secret  # materialize so it is unique per wallet from the start
    return wallet

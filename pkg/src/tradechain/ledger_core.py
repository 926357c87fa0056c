"""Append-only, hash-chained transaction log shared by IDML and TML."""

from __future__ import annotations

import hashlib
import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Optional

from . import canonical
from .errors import BadSignature, EncodingFailure, Unauthorized
from .keys import SigningKey, verify_signature

ZERO_HASH = bytes(32)
GENESIS = "GENESIS"


class LogicalClock:
    """Deterministic millisecond clock; ``tick`` ms elapse per reading."""

    def __init__(self, start_ms: int = 0, tick_ms: int = 1):
        self._now = start_ms
        self.tick_ms = tick_ms
        self._lock = threading.Lock()

    def now_ms(self) -> int:
        with self._lock:
            self._now += self.tick_ms
            return self._now

    def peek(self) -> int:
        return self._now

    def advance(self, ms: int) -> None:
        with self._lock:
            self._now += ms


class WallClock:
    def now_ms(self) -> int:
        return time.time_ns() // 1_000_000

    def peek(self) -> int:
        return self.now_ms()

    def advance(self, ms: int) -> None:
        raise TypeError("cannot advance wall-clock time")


def signing_preimage(ledger_name: str, tx_type: str, payload: bytes, submitter: str) -> bytes:
    """What a submitter signs.  Independent of seq and commit time."""
    return canonical.encode(["tradechain-tx", ledger_name, tx_type, bytes(payload), submitter])


def sign_tx(key: SigningKey, ledger_name: str, tx_type: str, payload: bytes, submitter: str) -> bytes:
    return key.sign(signing_preimage(ledger_name, tx_type, payload, submitter))


@dataclass(frozen=True)
class LedgerEntry:
    seq: int
    timestamp: int
    tx_type: str
    payload: bytes
    submitter: str
    signature: bytes
    prev_hash: bytes
    entry_hash: bytes

    def body(self) -> dict:
        return {"seq": self.seq, "timestamp": self.timestamp, "tx_type": self.tx_type,
                "payload": self.payload, "submitter": self.submitter,
                "signature": self.signature, "prev_hash": self.prev_hash}

    def compute_hash(self) -> bytes:
        return canonical.digest(self.body())

    def to_record(self) -> dict:
        rec = self.body()
        rec["entry_hash"] = self.entry_hash
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "LedgerEntry":
        return cls(**rec)

    def encode(self) -> bytes:
        return canonical.encode(self.to_record())

    @classmethod
    def decode(cls, data: bytes) -> "LedgerEntry":
        rec = canonical.decode(data)
        if not isinstance(rec, dict) or set(rec) != set(cls.__dataclass_fields__):
            raise EncodingFailure("not a ledger entry")
        return cls.from_record(rec)

    def payload_value(self):
        return canonical.decode(self.payload)


VerkeyResolver = Callable[[str], Optional[bytes]]
Authorizer = Callable[[str, object, str], None]


def verify_chain(entries: Iterable[LedgerEntry]) -> bool:
    prev = ZERO_HASH
    for expected_seq, entry in enumerate(entries):
        if entry.seq != expected_seq or entry.prev_hash != prev:
            return False
        if entry.compute_hash() != entry.entry_hash:
            return False
        prev = entry.entry_hash
    return True


class Ledger:
    """Single-orderer log.  Writes serialize on one lock; reads see committed prefixes."""

    def __init__(self, name: str, clock=None, resolver: VerkeyResolver | None = None,
                 authorizer: Authorizer | None = None, path: str | os.PathLike | None = None):
        self.name = name
        self.clock = clock or LogicalClock()
        self.resolver = resolver
        self.authorizer = authorizer
        self.lock = threading.RLock()
        self._entries: list[LedgerEntry] = []
        self._path = path
        self._fh = open(path, "a", encoding="ascii") if path is not None else None

    # -- writes ------------------------------------------------------------

    def append(self, tx_type: str, payload: bytes, submitter: str, signature: bytes) -> int:
        payload = bytes(payload)
        value = canonical.decode(payload)
        with self.lock:
            verkey = self.resolver(submitter) if self.resolver else None
            if verkey is None:
                raise Unauthorized(f"{submitter} has no registered verification key on {self.name}")
            if not verify_signature(verkey, signature, signing_preimage(self.name, tx_type, payload, submitter)):
                raise BadSignature(f"signature by {submitter} does not verify")
            if self.authorizer is not None:
                self.authorizer(tx_type, value, submitter)
            prev = self._entries[-1].entry_hash if self._entries else ZERO_HASH
            draft = LedgerEntry(seq=len(self._entries), timestamp=self.clock.now_ms(), tx_type=tx_type,
                                payload=payload, submitter=submitter, signature=bytes(signature),
                                prev_hash=prev, entry_hash=b"")
            entry = LedgerEntry(**{**draft.body(), "entry_hash": draft.compute_hash()})
            if self._fh is not None:
                self._fh.write(entry.encode().hex() + "\n")
                self._fh.flush()
                os.fsync(self._fh.fileno())
            self._entries.append(entry)
            return entry.seq

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    # -- reads -------------------------------------------------------------

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[LedgerEntry]:
        return iter(self.entries())

    def __getitem__(self, seq: int) -> LedgerEntry:
        return self._entries[seq]

    def entries(self) -> tuple[LedgerEntry, ...]:
        with self.lock:
            return tuple(self._entries)

    def head_hash(self) -> bytes:
        with self.lock:
            return self._entries[-1].entry_hash if self._entries else ZERO_HASH

    def verify_chain(self) -> bool:
        return verify_chain(self.entries())

    def scan(self, tx_type: str | Iterable[str] | None = None, submitter: str | None = None,
             start: int | None = None, end: int | None = None,
             predicate: Callable[[LedgerEntry], bool] | None = None) -> list[LedgerEntry]:
        """Order-preserving filter; ``start``/``end`` bound ``timestamp`` inclusively."""
        types = {tx_type} if isinstance(tx_type, str) else (set(tx_type) if tx_type is not None else None)
        out = []
        for e in self.entries():
            if types is not None and e.tx_type not in types:
                continue
            if submitter is not None and e.submitter != submitter:
                continue
            if start is not None and e.timestamp < start:
                continue
            if end is not None and e.timestamp > end:
                continue
            if predicate is not None and not predicate(e):
                continue
            out.append(e)
        return out

    def audit_signatures(self, resolver: VerkeyResolver | None = None) -> list[int]:
        """Seqs whose signature fails to re-verify under ``resolver``."""
        resolver = resolver or self.resolver
        bad = []
        for e in self.entries():
            verkey = resolver(e.submitter) if resolver else None
            if verkey is None or not verify_signature(
                    verkey, e.signature, signing_preimage(self.name, e.tx_type, e.payload, e.submitter)):
                bad.append(e.seq)
        return bad

    # -- export ------------------------------------------------------------

    def export_lines(self) -> list[str]:
        return [e.encode().hex() for e in self.entries()]

    def export(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="ascii") as fh:
            for line in self.export_lines():
                fh.write(line + "\n")


def load_export(lines: Iterable[str]) -> list[LedgerEntry]:
    """Parse export lines; raises ``EncodingFailure`` on malformed lines (no chain check).

    Each line must be the lowercase hex of one entry, optionally followed by a
    newline.  Anything else, including stray whitespace, is rejected.
    """
    entries = []
    for lineno, line in enumerate(lines, 1):
        body = line[:-1] if line.endswith("\n") else line
        try:
            raw = bytes.fromhex(body)
        except ValueError as exc:
            raise EncodingFailure(f"line {lineno}: not hex") from exc
        if not raw or raw.hex() != body:
            raise EncodingFailure(f"line {lineno}: empty or non-canonical hex")
        entries.append(LedgerEntry.decode(raw))
    return entries


def read_export(path: str | os.PathLike) -> list[LedgerEntry]:
    with open(path, encoding="ascii", newline="") as fh:
        text = fh.read()
    if text and not text.endswith("\n"):
        raise EncodingFailure("export must end with a newline")
    return load_export(text.splitlines(keepends=True))


def verify_export(path: str | os.PathLike) -> bool:
    try:
        return verify_chain(read_export(path))
    except (EncodingFailure, TypeError, ValueError):
        return False

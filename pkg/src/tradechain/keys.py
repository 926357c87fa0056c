"""Signing and key-agreement keys, and anonymous sealed boxes.

Ed25519 signs, X25519 agrees.  Private keys are derived from caller-supplied
randomness so a seeded run reproduces every key and signature bit for bit.
"""

from __future__ import annotations

import random

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import DecryptionFailure

SIGNATURE_SUITE = "ed25519"
SEAL_SUITE = "x25519-hkdf-sha256-chacha20poly1305"

_RAW = serialization.Encoding.Raw
_RAW_PUB = serialization.PublicFormat.Raw
_RAW_PRIV = serialization.PrivateFormat.Raw
_NO_ENC = serialization.NoEncryption()


def random_bytes(rng: random.Random, n: int) -> bytes:
    return rng.getrandbits(8 * n).to_bytes(n, "big")


class SigningKey:
    __slots__ = ("_sk", "verkey")

    def __init__(self, seed: bytes):
        self._sk = Ed25519PrivateKey.from_private_bytes(seed)
        self.verkey = self._sk.public_key().public_bytes(_RAW, _RAW_PUB)

    @classmethod
    def generate(cls, rng: random.Random) -> "SigningKey":
        return cls(random_bytes(rng, 32))

    def sign(self, message: bytes) -> bytes:
        return self._sk.sign(message)

    def seed(self) -> bytes:
        return self._sk.private_bytes(_RAW, _RAW_PRIV, _NO_ENC)

    def __repr__(self) -> str:
        return f"SigningKey(verkey={self.verkey.hex()[:16]}...)"


def verify_signature(verkey: bytes, signature: bytes, message: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(bytes(verkey)).verify(bytes(signature), message)
    except (InvalidSignature, ValueError, TypeError):
        return False
    return True


class AgreementKey:
    __slots__ = ("_sk", "public")

    def __init__(self, seed: bytes):
        self._sk = X25519PrivateKey.from_private_bytes(seed)
        self.public = self._sk.public_key().public_bytes(_RAW, _RAW_PUB)

    @classmethod
    def generate(cls, rng: random.Random) -> "AgreementKey":
        return cls(random_bytes(rng, 32))

    def exchange(self, peer_public: bytes) -> bytes:
        return self._sk.exchange(X25519PublicKey.from_public_bytes(peer_public))

    def seed(self) -> bytes:
        return self._sk.private_bytes(_RAW, _RAW_PRIV, _NO_ENC)

    def __repr__(self) -> str:
        return f"AgreementKey(public={self.public.hex()[:16]}...)"


def _seal_key(shared: bytes, eph_pub: bytes, recipient: bytes) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=32, salt=eph_pub + recipient,
                info=b"tradechain-seal").derive(shared)


def seal(recipient_public: bytes, plaintext: bytes, rng: random.Random) -> bytes:
    """Anonymous box: ``eph_pub | nonce | aead``; the sender stays unidentified."""
    eph = AgreementKey.generate(rng)
    shared = eph.exchange(recipient_public)
    key = _seal_key(shared, eph.public, recipient_public)
    nonce = random_bytes(rng, 12)
    return eph.public + nonce + ChaCha20Poly1305(key).encrypt(nonce, plaintext, eph.public + recipient_public)


def open_seal(recipient: AgreementKey, sealed: bytes) -> bytes:
    if len(sealed) < 32 + 12 + 16:
        raise DecryptionFailure("sealed box too short")
    eph_pub, nonce, body = sealed[:32], sealed[32:44], sealed[44:]
    try:
        shared = recipient.exchange(eph_pub)
        key = _seal_key(shared, eph_pub, recipient.public)
        return ChaCha20Poly1305(key).decrypt(nonce, body, eph_pub + recipient.public)
    except (InvalidTag, ValueError) as exc:
        raise DecryptionFailure("cannot open sealed box") from exc

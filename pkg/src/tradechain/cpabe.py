"""Ciphertext-policy ABE over BLS12-381 (threshold access trees).

Bethencourt-Sahai-Waters style: the authority holds ``(beta, g2^alpha)``; a
user key binds every attribute component to one per-user random ``r`` so
components from different users cannot be mixed.  Ciphertexts share the
exponent ``s`` down the policy tree with one polynomial per gate.

The pairing layer only encapsulates a random GT element; the payload itself
rides in AES-GCM under a key hashed from that element (a KEM/DEM split).

Policy syntax::

    and(role:qsc, or(role:auditor, thresh(2, org:a, org:b, org:c)))
"""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from petrelic.multiplicative.pairing import G1, G2, GT, G1Element, G2Element, GTElement

from . import canonical
from .crypto_math import system_rng
from .errors import EncodingFailure, IntegrityFailure, InvalidArgument, MalformedPolicy, PolicyNotSatisfied

ORDER = int(G1.order())
GROUP_ID = "bls12-381"


# --------------------------------------------------------------------------
# policies
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Leaf:
    attribute: str

    def to_text(self) -> str:
        return self.attribute


@dataclass(frozen=True)
class Gate:
    k: int
    children: tuple["Policy", ...]

    def __post_init__(self):
        if not self.children:
            raise MalformedPolicy("gate without children")
        if not 1 <= self.k <= len(self.children):
            raise MalformedPolicy(f"threshold {self.k} outside 1..{len(self.children)}")

    def to_text(self) -> str:
        inner = ", ".join(c.to_text() for c in self.children)
        if self.k == len(self.children):
            return f"and({inner})"
        if self.k == 1:
            return f"or({inner})"
        return f"thresh({self.k}, {inner})"


Policy = Union[Leaf, Gate]

_ATTR = re.compile(r"[A-Za-z0-9_.\-]+:[A-Za-z0-9_.\-]+")
_TOKEN = re.compile(r"\s*(?:(and|or|thresh)\s*\(|([A-Za-z0-9_.\-]+:[A-Za-z0-9_.\-]+)|(\d+)|(,)|(\)))")


def leaf(attribute: str) -> Leaf:
    if not isinstance(attribute, str) or not _ATTR.fullmatch(attribute):
        raise MalformedPolicy(f"bad attribute {attribute!r}; expected key:value")
    return Leaf(attribute)


def and_(*children: Policy) -> Gate:
    return Gate(len(children), tuple(children))


def or_(*children: Policy) -> Gate:
    return Gate(1, tuple(children))


def thresh(k: int, *children: Policy) -> Gate:
    return Gate(k, tuple(children))


def parse_policy(text: str) -> Policy:
    pos = 0
    tokens = []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise MalformedPolicy(f"unexpected input at offset {pos}: {text[pos:pos + 12]!r}")
        pos = m.end()
        gate, attr, num, comma, close = m.groups()
        if gate:
            tokens.append(("gate", gate))
        elif attr:
            tokens.append(("attr", attr))
        elif num:
            tokens.append(("num", int(num)))
        elif comma:
            tokens.append((",", None))
        else:
            tokens.append((")", None))
        while pos < len(text) and text[pos].isspace():
            pos += 1

    idx = 0

    def take(kind=None):
        nonlocal idx
        if idx >= len(tokens):
            raise MalformedPolicy("unexpected end of policy")
        tok = tokens[idx]
        if kind is not None and tok[0] != kind:
            raise MalformedPolicy(f"expected {kind}, got {tok[0]}")
        idx += 1
        return tok

    def node() -> Policy:
        kind, value = take()
        if kind == "attr":
            return Leaf(value)
        if kind != "gate":
            raise MalformedPolicy(f"unexpected {kind}")
        k = None
        if value == "thresh":
            k = take("num")[1]
            take(",")
        children = [node()]
        while idx < len(tokens) and tokens[idx][0] == ",":
            take(",")
            children.append(node())
        take(")")
        if value == "and":
            k = len(children)
        elif value == "or":
            k = 1
        return Gate(k, tuple(children))

    if not tokens:
        raise MalformedPolicy("empty policy")
    tree = node()
    if idx != len(tokens):
        raise MalformedPolicy("trailing tokens in policy")
    return tree


def as_policy(policy: Union[str, Policy]) -> Policy:
    if isinstance(policy, str):
        return parse_policy(policy)
    if isinstance(policy, (Leaf, Gate)):
        return policy
    raise MalformedPolicy(f"not a policy: {type(policy).__name__}")


def policy_satisfied(policy: Union[str, Policy], attributes: Iterable[str]) -> bool:
    policy = as_policy(policy)
    attrs = set(attributes)

    def ok(node: Policy) -> bool:
        if isinstance(node, Leaf):
            return node.attribute in attrs
        return sum(ok(c) for c in node.children) >= node.k

    return ok(policy)


def policy_leaves(policy: Policy) -> list[str]:
    if isinstance(policy, Leaf):
        return [policy.attribute]
    return [a for c in policy.children for a in policy_leaves(c)]


# --------------------------------------------------------------------------
# keys
# --------------------------------------------------------------------------

def _scalar(rng: random.Random) -> int:
    return rng.randrange(1, ORDER)


def _hash_attr(attribute: str) -> G2Element:
    return G2.hash_to_point(b"tradechain-abe-attr:" + attribute.encode("utf-8"))


@dataclass(frozen=True)
class AbeMasterPublic:
    g1: G1Element
    g2: G2Element
    h: G1Element
    egg_alpha: GTElement

    def to_record(self) -> dict:
        return {"group": GROUP_ID, "g1": self.g1.to_binary(), "g2": self.g2.to_binary(),
                "h": self.h.to_binary(), "egg_alpha": self.egg_alpha.to_binary()}

    @classmethod
    def from_record(cls, rec: dict) -> "AbeMasterPublic":
        if rec.get("group") != GROUP_ID:
            raise EncodingFailure("unknown pairing group")
        return cls(G1Element.from_binary(rec["g1"]), G2Element.from_binary(rec["g2"]),
                   G1Element.from_binary(rec["h"]), GTElement.from_binary(rec["egg_alpha"]))

    def __eq__(self, other) -> bool:
        return isinstance(other, AbeMasterPublic) and self.to_record() == other.to_record()

    def __hash__(self) -> int:
        return hash(canonical.encode(self.to_record()))


@dataclass(frozen=True)
class AbeMasterSecret:
    beta: int
    g2_alpha: G2Element

    def __repr__(self) -> str:
        return "AbeMasterSecret(<hidden>)"


@dataclass(frozen=True)
class AbeAuthorityKeys:
    master_public: AbeMasterPublic
    master_secret: AbeMasterSecret


@dataclass(frozen=True)
class AbeUserKey:
    attributes: frozenset
    D: G2Element
    components: dict  # attribute -> (D_j in G2, D'_j in G1)

    def to_record(self) -> dict:
        return {"attributes": sorted(self.attributes), "D": self.D.to_binary(),
                "components": {a: [dj.to_binary(), dpj.to_binary()] for a, (dj, dpj) in self.components.items()}}

    @classmethod
    def from_record(cls, rec: dict) -> "AbeUserKey":
        return cls(frozenset(rec["attributes"]), G2Element.from_binary(rec["D"]),
                   {a: (G2Element.from_binary(v[0]), G1Element.from_binary(v[1]))
                    for a, v in rec["components"].items()})


def abe_setup(profile=None, rng: random.Random | None = None) -> AbeAuthorityKeys:
    """``profile`` is accepted for interface symmetry; the pairing group is fixed."""
    rng = rng or system_rng()
    g1, g2 = G1.generator(), G2.generator()
    alpha, beta = _scalar(rng), _scalar(rng)
    g2_alpha = g2 ** alpha
    public = AbeMasterPublic(g1=g1, g2=g2, h=g1 ** beta, egg_alpha=g1.pair(g2_alpha))
    return AbeAuthorityKeys(public, AbeMasterSecret(beta=beta, g2_alpha=g2_alpha))


def abe_keygen(authority: AbeAuthorityKeys, attributes: Iterable[str],
               rng: random.Random | None = None) -> AbeUserKey:
    attrs = frozenset(attributes)
    if not attrs:
        raise InvalidArgument("attribute set must be non-empty")
    for a in attrs:
        leaf(a)
    rng = rng or system_rng()
    pub, sec = authority.master_public, authority.master_secret
    r = _scalar(rng)
    g2_r = pub.g2 ** r
    D = (sec.g2_alpha * g2_r) ** pow(sec.beta, -1, ORDER)
    components = {}
    for a in sorted(attrs):
        rj = _scalar(rng)
        components[a] = (g2_r * _hash_attr(a) ** rj, pub.g1 ** rj)
    return AbeUserKey(attrs, D, components)


# --------------------------------------------------------------------------
# encryption
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AbeCiphertext:
    policy: str
    C_tilde: GTElement
    C: G1Element
    leaves: tuple  # (C_y in G1, C'_y in G2) in left-to-right leaf order
    nonce: bytes
    sealed: bytes

    def header(self) -> dict:
        return {"policy": self.policy, "C_tilde": self.C_tilde.to_binary(), "C": self.C.to_binary(),
                "leaves": [[cy.to_binary(), cpy.to_binary()] for cy, cpy in self.leaves]}

    def to_record(self) -> dict:
        body = canonical.encode({**self.header(), "nonce": self.nonce, "sealed": self.sealed})
        return {"body": body, "checksum": hashlib.sha256(body).digest()}

    def to_bytes(self) -> bytes:
        return canonical.encode(self.to_record())

    @classmethod
    def from_record(cls, rec: dict) -> "AbeCiphertext":
        try:
            body, checksum = rec["body"], rec["checksum"]
        except (KeyError, TypeError) as exc:
            raise IntegrityFailure("ciphertext framing damaged") from exc
        if not isinstance(body, bytes) or hashlib.sha256(body).digest() != checksum:
            raise IntegrityFailure("ciphertext checksum mismatch")
        try:
            f = canonical.decode(body)
            leaves = tuple((G1Element.from_binary(a), G2Element.from_binary(b)) for a, b in f["leaves"])
            ct = cls(f["policy"], GTElement.from_binary(f["C_tilde"]), G1Element.from_binary(f["C"]),
                     leaves, f["nonce"], f["sealed"])
        except Exception as exc:  # relic raises assorted types on bad points
            raise IntegrityFailure("ciphertext body malformed") from exc
        return ct

    @classmethod
    def from_bytes(cls, data: bytes) -> "AbeCiphertext":
        try:
            rec = canonical.decode(data)
        except EncodingFailure as exc:
            raise IntegrityFailure("ciphertext encoding damaged") from exc
        if not isinstance(rec, dict):
            raise IntegrityFailure("ciphertext encoding damaged")
        return cls.from_record(rec)


def _dem_key(element: GTElement) -> bytes:
    return hashlib.sha256(b"tradechain-abe-kem:" + element.to_binary()).digest()


def _share(node: Policy, secret: int, rng: random.Random, out: list[int]) -> None:
    if isinstance(node, Leaf):
        out.append(secret)
        return
    coeffs = [secret] + [_scalar(rng) for _ in range(node.k - 1)]
    for i, child in enumerate(node.children, 1):
        value = 0
        for c in reversed(coeffs):
            value = (value * i + c) % ORDER
        _share(child, value, rng, out)


def abe_encrypt(master_public: AbeMasterPublic, policy: Union[str, Policy], plaintext: bytes,
                rng: random.Random | None = None) -> AbeCiphertext:
    rng = rng or system_rng()
    tree = as_policy(policy)
    for a in policy_leaves(tree):
        leaf(a)
    s = _scalar(rng)
    shares: list[int] = []
    _share(tree, s, rng, shares)
    leaves = tuple((master_public.g1 ** q, _hash_attr(a) ** q) for a, q in zip(policy_leaves(tree), shares))
    M = master_public.egg_alpha ** _scalar(rng)
    text = tree.to_text()
    partial = AbeCiphertext(text, M * master_public.egg_alpha ** s, master_public.h ** s, leaves, b"", b"")
    nonce = rng.getrandbits(96).to_bytes(12, "big")
    aad = canonical.encode(partial.header())
    sealed = AESGCM(_dem_key(M)).encrypt(nonce, bytes(plaintext), aad)
    return AbeCiphertext(text, partial.C_tilde, partial.C, leaves, nonce, sealed)


def _lagrange_at_zero(i: int, indices: Sequence[int]) -> int:
    num, den = 1, 1
    for j in indices:
        if j != i:
            num = num * (-j) % ORDER
            den = den * (i - j) % ORDER
    return num * pow(den, -1, ORDER) % ORDER


def _decrypt_node(node: Policy, key: AbeUserKey, leaves: Sequence, cursor: list[int]):
    """Returns e(g,g)^{r*q_node(0)} or ``None``; ``cursor`` walks leaves in order."""
    if isinstance(node, Leaf):
        C_y, Cp_y = leaves[cursor[0]]
        cursor[0] += 1
        comp = key.components.get(node.attribute)
        if comp is None:
            return None
        D_j, Dp_j = comp
        return C_y.pair(D_j) / Dp_j.pair(Cp_y)
    found = []
    for i, child in enumerate(node.children, 1):
        if len(found) >= node.k:
            cursor[0] += len(policy_leaves(child))
            continue
        value = _decrypt_node(child, key, leaves, cursor)
        if value is not None:
            found.append((i, value))
    if len(found) < node.k:
        return None
    indices = [i for i, _ in found]
    result = GT.unity()
    for i, value in found:
        result = result * value ** _lagrange_at_zero(i, indices)
    return result


def abe_decrypt(user_key: AbeUserKey, ciphertext: Union[AbeCiphertext, bytes]) -> bytes:
    if isinstance(ciphertext, (bytes, bytearray)):
        ciphertext = AbeCiphertext.from_bytes(bytes(ciphertext))
    try:
        tree = parse_policy(ciphertext.policy)
    except MalformedPolicy as exc:
        raise IntegrityFailure("embedded policy malformed") from exc
    if len(policy_leaves(tree)) != len(ciphertext.leaves):
        raise IntegrityFailure("leaf count does not match policy")
    if not policy_satisfied(tree, user_key.attributes):
        raise PolicyNotSatisfied("attributes do not satisfy the ciphertext policy")
    A = _decrypt_node(tree, user_key, ciphertext.leaves, [0])
    if A is None:
        raise PolicyNotSatisfied("key components do not cover the policy")
    M = ciphertext.C_tilde / (ciphertext.C.pair(user_key.D) / A)
    aad = canonical.encode(ciphertext.header())
    try:
        return AESGCM(_dem_key(M)).decrypt(ciphertext.nonce, ciphertext.sealed, aad)
    except InvalidTag as exc:
        raise IntegrityFailure("payload authentication failed") from exc

"""Camenisch-Lysyanskaya anonymous credentials.

Schemas and credential definitions, blinded issuance bound to a wallet's
master secret, and non-interactive selective-disclosure proofs with
``attribute >= threshold`` predicates.

All proofs follow the usual Fiat-Shamir sigma shape: the prover commits to
masked witnesses (t-values), derives the challenge ``c`` from every public
value, and answers with ``mask + c * witness``.  The verifier rebuilds the
t-values from the responses and accepts iff the recomputed challenge matches.
Exponent arithmetic is over the integers, so nothing here needs the issuer's
factorisation except ``issue_credential``.
"""

from __future__ import annotations

import hashlib
import random
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence, Union

from . import canonical
from .crypto_math import (
    IssuerKeyPair,
    IssuerPublicKey,
    IssuerSecretKey,
    SecurityProfile,
    commit,
    fiat_shamir_challenge,
    four_square_decompose,
    gen_issuer_keys,
    get_profile,
    invert,
    multi_exp,
    powmod,
    prime_in_range,
    system_rng,
)
from .errors import (
    ArityMismatch,
    DuplicateAttribute,
    InvalidArgument,
    InvalidBlindingProof,
    NonceReused,
    PredicateUnsatisfied,
)

MASTER_SECRET = "master_secret"
REVOCATION_INDEX = "revocation_index"
DEFAULT_EXTRAS = ("issuer_info", "trade_type", REVOCATION_INDEX)
MAX_DIRECT_INT = 2 ** 32

AttrValue = Union[str, int]


def encode_attribute(value: AttrValue, n: int) -> int:
    """Integers in ``[0, 2**32]`` map to themselves; text hashes into ``Z_n``."""
    if isinstance(value, bool):
        raise InvalidArgument("booleans are not attribute values")
    if isinstance(value, int):
        if not 0 <= value <= MAX_DIRECT_INT:
            raise InvalidArgument(f"integer attribute {value} outside [0, 2^32]")
        return value
    if isinstance(value, str):
        return int.from_bytes(hashlib.sha256(value.encode("utf-8")).digest(), "big") % n
    raise InvalidArgument(f"unsupported attribute type {type(value).__name__}")


def _rand_bits(rng: random.Random, bits: int) -> int:
    return rng.getrandbits(bits)


# --------------------------------------------------------------------------
# schema & credential definition
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Schema:
    name: str
    version: str
    attribute_names: tuple[str, ...]

    def to_record(self) -> dict:
        return {"name": self.name, "version": self.version,
                "attribute_names": list(self.attribute_names)}

    @classmethod
    def from_record(cls, rec: dict) -> "Schema":
        return cls(rec["name"], rec["version"], tuple(rec["attribute_names"]))

    @property
    def id(self) -> str:
        return "schema:" + canonical.digest(self.to_record()).hex()


def _check_names(names: Sequence[str]) -> tuple[str, ...]:
    names = tuple(names)
    seen = set()
    for name in names:
        if not isinstance(name, str) or not name:
            raise InvalidArgument("attribute names must be non-empty strings")
        if name == MASTER_SECRET:
            raise InvalidArgument(f"{MASTER_SECRET!r} is reserved")
        if name in seen:
            raise DuplicateAttribute(f"duplicate attribute {name!r}")
        seen.add(name)
    return names


def create_schema(name: str, version: str, attribute_names: Sequence[str]) -> Schema:
    if not name or not version:
        raise InvalidArgument("schema name and version are required")
    names = _check_names(attribute_names)
    if not names:
        raise InvalidArgument("schema needs at least one attribute")
    return Schema(name=name, version=version, attribute_names=names)


@dataclass(frozen=True)
class CredentialDefinition:
    schema_ref: str
    issuer_did: str
    public_key: IssuerPublicKey
    schema_attribute_names: tuple[str, ...]
    extra_attribute_names: tuple[str, ...]
    revocation_registry_id: str
    profile_name: str

    @property
    def attribute_names(self) -> tuple[str, ...]:
        """Canonical order; index ``i`` uses base ``R[i]``, slot 0 is ``m_1``."""
        return (MASTER_SECRET,) + self.schema_attribute_names + self.extra_attribute_names

    @property
    def profile(self) -> SecurityProfile:
        return get_profile(self.profile_name)

    def base(self, name: str) -> int:
        return self.public_key.R[self.attribute_names.index(name)]

    def to_record(self) -> dict:
        return {
            "schema_ref": self.schema_ref,
            "issuer_did": self.issuer_did,
            "public_key": self.public_key.to_record(),
            "schema_attribute_names": list(self.schema_attribute_names),
            "extra_attribute_names": list(self.extra_attribute_names),
            "revocation_registry_id": self.revocation_registry_id,
            "profile_name": self.profile_name,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "CredentialDefinition":
        return cls(
            schema_ref=rec["schema_ref"],
            issuer_did=rec["issuer_did"],
            public_key=IssuerPublicKey.from_record(rec["public_key"]),
            schema_attribute_names=tuple(rec["schema_attribute_names"]),
            extra_attribute_names=tuple(rec["extra_attribute_names"]),
            revocation_registry_id=rec["revocation_registry_id"],
            profile_name=rec["profile_name"],
        )

    @property
    def id(self) -> str:
        return "creddef:" + canonical.digest(self.to_record()).hex()


class IssuerSecret:
    """The issuer's private half plus single-use offer nonces."""

    def __init__(self, key: IssuerSecretKey, cache_size: int = 4096):
        self.key = key
        self.cache_size = cache_size
        self._offered: "OrderedDict[int, None]" = OrderedDict()
        self._used: "OrderedDict[int, None]" = OrderedDict()
        self._next_index = 1

    def offer_nonce(self, rng: random.Random) -> int:
        nonce = _rand_bits(rng, 80)
        self._offered[nonce] = None
        while len(self._offered) > self.cache_size:
            self._offered.popitem(last=False)
        return nonce

    def consume(self, nonce: int) -> None:
        if nonce in self._used:
            raise NonceReused("issuer nonce already used")
        if nonce not in self._offered:
            raise NonceReused("nonce was never offered (or aged out)")
        del self._offered[nonce]
        self._used[nonce] = None
        while len(self._used) > self.cache_size:
            self._used.popitem(last=False)

    def next_revocation_index(self) -> int:
        index = self._next_index
        self._next_index += 1
        return index

    def to_record(self) -> dict:
        return {"key": self.key.to_record(), "next_index": self._next_index,
                "offered": list(self._offered), "used": list(self._used)}

    @classmethod
    def from_record(cls, rec: dict) -> "IssuerSecret":
        obj = cls(IssuerSecretKey.from_record(rec["key"]))
        obj._next_index = rec["next_index"]
        obj._offered = OrderedDict((n, None) for n in rec["offered"])
        obj._used = OrderedDict((n, None) for n in rec["used"])
        return obj


def create_cred_def(schema: Schema, extra_attribute_names: Sequence[str], profile: SecurityProfile,
                    issuer_did: str, rng: random.Random | None = None,
                    keypair: IssuerKeyPair | None = None) -> tuple[CredentialDefinition, IssuerSecret]:
    extras = _check_names(extra_attribute_names)
    overlap = set(extras) & set(schema.attribute_names)
    if overlap:
        raise DuplicateAttribute(f"extra attributes shadow schema attributes: {sorted(overlap)}")
    l = len(schema.attribute_names) + len(extras) + 1
    rng = rng or system_rng()
    description = {"l": l, "attributes": [MASTER_SECRET, *schema.attribute_names, *extras]}
    if keypair is None:
        keypair = gen_issuer_keys(l, profile, rng, description=description)
    elif keypair.public.l != l:
        raise ArityMismatch("supplied key has the wrong number of bases")
    registry = "revreg:" + hashlib.sha256(
        canonical.encode([issuer_did, schema.id, keypair.public.n])).hexdigest()
    cred_def = CredentialDefinition(
        schema_ref=schema.id,
        issuer_did=issuer_did,
        public_key=keypair.public,
        schema_attribute_names=schema.attribute_names,
        extra_attribute_names=extras,
        revocation_registry_id=registry,
        profile_name=profile.name,
    )
    return cred_def, IssuerSecret(keypair.secret)


# --------------------------------------------------------------------------
# issuance
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MasterSecret:
    m1: int

    @classmethod
    def generate(cls, profile: SecurityProfile, rng: random.Random) -> "MasterSecret":
        return cls(_rand_bits(rng, profile.m_bits) | 1)

    def __repr__(self) -> str:
        return "MasterSecret(<hidden>)"


@dataclass(frozen=True)
class CredentialRequest:
    blinded_secret: int
    did_p: str
    nonce: int
    cred_def_id: str
    challenge: int
    v_prime_hat: int
    m1_hat: int

    def to_record(self) -> dict:
        return {"blinded_secret": self.blinded_secret, "did_p": self.did_p, "nonce": self.nonce,
                "cred_def_id": self.cred_def_id, "challenge": self.challenge,
                "v_prime_hat": self.v_prime_hat, "m1_hat": self.m1_hat}

    @classmethod
    def from_record(cls, rec: dict) -> "CredentialRequest":
        return cls(**rec)


@dataclass(frozen=True)
class BlindingState:
    v_prime: int


def _blinding_transcript(cred_def_id: str, did_p: str, nonce: int, U: int, U_t: int) -> list:
    return ["cred-request", cred_def_id, did_p, nonce, U, U_t]


def create_cred_request(cred_def: CredentialDefinition, master_secret: MasterSecret, nonce: int,
                        did_p: str, rng: random.Random | None = None) -> tuple[CredentialRequest, BlindingState]:
    rng = rng or system_rng()
    prof = cred_def.profile
    pk = cred_def.public_key
    vp_bits = prof.n_bits + prof.stat_bits
    v_prime = _rand_bits(rng, vp_bits)
    R1 = pk.R[0]
    U = commit(pk.S, R1, pk.n, v_prime, master_secret.m1)
    v_t = _rand_bits(rng, prof.blind_bits(vp_bits))
    m_t = _rand_bits(rng, prof.blind_bits(prof.m_bits))
    U_t = commit(pk.S, R1, pk.n, v_t, m_t)
    c = fiat_shamir_challenge(_blinding_transcript(cred_def.id, did_p, nonce, U, U_t))
    request = CredentialRequest(
        blinded_secret=U, did_p=did_p, nonce=nonce, cred_def_id=cred_def.id, challenge=c,
        v_prime_hat=v_t + c * v_prime, m1_hat=m_t + c * master_secret.m1,
    )
    return request, BlindingState(v_prime)


def verify_cred_request(cred_def: CredentialDefinition, request: CredentialRequest) -> bool:
    pk = cred_def.public_key
    if request.cred_def_id != cred_def.id:
        return False
    U = request.blinded_secret % pk.n
    if U in (0, 1):
        return False
    try:
        U_hat = powmod(U, -request.challenge, pk.n) * commit(
            pk.S, pk.R[0], pk.n, request.v_prime_hat, request.m1_hat) % pk.n
    except ZeroDivisionError:
        return False
    c = fiat_shamir_challenge(_blinding_transcript(
        cred_def.id, request.did_p, request.nonce, request.blinded_secret, U_hat))
    return c == request.challenge


@dataclass(frozen=True)
class IssuedCredential:
    """What the issuer sends back; ``v_double_prime`` still lacks the holder's share."""

    cred_def_id: str
    raw_values: dict
    A: int
    e: int
    v_double_prime: int

    def to_record(self) -> dict:
        return {"cred_def_id": self.cred_def_id, "raw_values": dict(self.raw_values),
                "A": self.A, "e": self.e, "v_double_prime": self.v_double_prime}

    @classmethod
    def from_record(cls, rec: dict) -> "IssuedCredential":
        return cls(**rec)


@dataclass(frozen=True)
class Credential:
    cred_def_id: str
    raw_values: dict
    attribute_values: dict
    A: int
    e: int
    v: int

    def to_record(self) -> dict:
        return {"cred_def_id": self.cred_def_id, "raw_values": dict(self.raw_values),
                "attribute_values": dict(self.attribute_values),
                "A": self.A, "e": self.e, "v": self.v}

    @classmethod
    def from_record(cls, rec: dict) -> "Credential":
        return cls(**rec)


def _encoded_values(cred_def: CredentialDefinition, raw: Mapping[str, AttrValue]) -> dict:
    expected = set(cred_def.attribute_names[1:])
    if set(raw) != expected:
        missing = sorted(expected - set(raw))
        extra = sorted(set(raw) - expected)
        raise ArityMismatch(f"attribute mismatch: missing={missing} unexpected={extra}")
    return {name: encode_attribute(raw[name], cred_def.public_key.n) for name in cred_def.attribute_names[1:]}


def issue_credential(cred_def: CredentialDefinition, issuer_secret: IssuerSecret, request: CredentialRequest,
                     attribute_values: Mapping[str, AttrValue], rng: random.Random | None = None) -> IssuedCredential:
    rng = rng or system_rng()
    if not verify_cred_request(cred_def, request):
        raise InvalidBlindingProof("blinded master secret proof does not verify")
    encoded = _encoded_values(cred_def, attribute_values)
    issuer_secret.consume(request.nonce)
    prof = cred_def.profile
    pk = cred_def.public_key
    sk = issuer_secret.key
    e = prime_in_range(1 << (prof.e_bits - 1), 1 << prof.e_range_bits, rng)
    v2 = (1 << (prof.v_bits - 1)) | _rand_bits(rng, prof.v_bits - 1)
    denom = request.blinded_secret * powmod(pk.S, v2, pk.n) * multi_exp(
        ((cred_def.base(name), m) for name, m in encoded.items()), pk.n) % pk.n
    Q = pk.Z * invert(denom, pk.n) % pk.n
    A = powmod(Q, invert(e, sk.order), pk.n)
    return IssuedCredential(cred_def_id=cred_def.id, raw_values=dict(attribute_values), A=A, e=e, v_double_prime=v2)


def signature_holds(cred_def: CredentialDefinition, credential: Credential, master_secret: MasterSecret) -> bool:
    """Check ``Z == A^e S^v prod R_i^{m_i}`` for the finalized credential."""
    pk = cred_def.public_key
    try:
        values = _encoded_values(cred_def, credential.raw_values)
    except (ArityMismatch, InvalidArgument):
        return False
    if values != credential.attribute_values:
        return False
    rhs = powmod(credential.A, credential.e, pk.n) * powmod(pk.S, credential.v, pk.n) % pk.n
    rhs = rhs * powmod(pk.R[0], master_secret.m1, pk.n) % pk.n
    rhs = rhs * multi_exp(((cred_def.base(k), m) for k, m in values.items()), pk.n) % pk.n
    return rhs == pk.Z


def finalize_credential(cred_def: CredentialDefinition, issued: IssuedCredential, blinding: BlindingState,
                        master_secret: MasterSecret) -> Credential:
    credential = Credential(
        cred_def_id=issued.cred_def_id,
        raw_values=dict(issued.raw_values),
        attribute_values=_encoded_values(cred_def, issued.raw_values),
        A=issued.A,
        e=issued.e,
        v=blinding.v_prime + issued.v_double_prime,
    )
    if not signature_holds(cred_def, credential, master_secret):
        raise InvalidArgument("issued credential does not verify")
    return credential


# --------------------------------------------------------------------------
# proofs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Predicate:
    attribute: str
    threshold: int
    op: str = ">="

    def __post_init__(self):
        if self.op != ">=":
            raise InvalidArgument("only >= predicates are supported")
        if isinstance(self.threshold, bool) or not isinstance(self.threshold, int):
            raise InvalidArgument("threshold must be an integer")

    def to_record(self) -> dict:
        return {"attribute": self.attribute, "threshold": self.threshold, "op": self.op}

    @classmethod
    def from_record(cls, rec: dict) -> "Predicate":
        return cls(rec["attribute"], rec["threshold"], rec["op"])


@dataclass(frozen=True)
class ProofRequest:
    requested_revealed: tuple[str, ...]
    predicates: tuple[Predicate, ...]
    issuer_constraints: Optional[str]
    nonce: int

    def __post_init__(self):
        revealed = set(self.requested_revealed)
        if MASTER_SECRET in revealed:
            raise InvalidArgument("the master secret is never revealed")
        if len(revealed) != len(self.requested_revealed):
            raise InvalidArgument("duplicate revealed attribute")
        clash = revealed & {p.attribute for p in self.predicates}
        if clash:
            raise InvalidArgument(f"attributes both revealed and predicated: {sorted(clash)}")

    def to_record(self) -> dict:
        return {"requested_revealed": list(self.requested_revealed),
                "predicates": [p.to_record() for p in self.predicates],
                "issuer_constraints": self.issuer_constraints, "nonce": self.nonce}

    @classmethod
    def from_record(cls, rec: dict) -> "ProofRequest":
        return cls(tuple(rec["requested_revealed"]),
                   tuple(Predicate.from_record(p) for p in rec["predicates"]),
                   rec["issuer_constraints"], rec["nonce"])


@dataclass(frozen=True)
class PredicateProof:
    attribute: str
    threshold: int
    T: tuple[int, int, int, int]
    T_delta: int
    u_hat: tuple[int, int, int, int]
    r_hat: tuple[int, int, int, int]
    r_delta_hat: int
    alpha_hat: int

    def to_record(self) -> dict:
        return {"attribute": self.attribute, "threshold": self.threshold, "T": list(self.T),
                "T_delta": self.T_delta, "u_hat": list(self.u_hat), "r_hat": list(self.r_hat),
                "r_delta_hat": self.r_delta_hat, "alpha_hat": self.alpha_hat}

    @classmethod
    def from_record(cls, rec: dict) -> "PredicateProof":
        return cls(rec["attribute"], rec["threshold"], tuple(rec["T"]), rec["T_delta"],
                   tuple(rec["u_hat"]), tuple(rec["r_hat"]), rec["r_delta_hat"], rec["alpha_hat"])


@dataclass(frozen=True)
class Proof:
    cred_def_id: str
    nonce: int
    revealed_values: dict
    A_prime: int
    e_hat: int
    v_hat: int
    m_hat: dict
    predicate_proofs: tuple[PredicateProof, ...]
    challenge: int

    def to_record(self) -> dict:
        return {"cred_def_id": self.cred_def_id, "nonce": self.nonce,
                "revealed_values": dict(self.revealed_values), "A_prime": self.A_prime,
                "e_hat": self.e_hat, "v_hat": self.v_hat, "m_hat": dict(self.m_hat),
                "predicate_proofs": [p.to_record() for p in self.predicate_proofs],
                "challenge": self.challenge}

    @classmethod
    def from_record(cls, rec: dict) -> "Proof":
        return cls(rec["cred_def_id"], rec["nonce"], dict(rec["revealed_values"]), rec["A_prime"],
                   rec["e_hat"], rec["v_hat"], dict(rec["m_hat"]),
                   tuple(PredicateProof.from_record(p) for p in rec["predicate_proofs"]),
                   rec["challenge"])

    def digest(self) -> bytes:
        return canonical.digest(self.to_record())


def _proof_transcript(cred_def_id: str, nonce: int, revealed: Mapping[str, AttrValue], A_prime: int,
                      T: int, predicate_parts: Sequence[list]) -> list:
    return ["cred-proof", cred_def_id, nonce, dict(revealed), A_prime, T, list(predicate_parts)]


def _sizes(prof: SecurityProfile) -> dict:
    r_bits = prof.n_bits + prof.stat_bits
    return {
        "r_A": r_bits,
        "e": prof.blind_bits(prof.e_range_bits),
        # |v'| = |v - e*r_A| is dominated by the larger term
        "v": prof.blind_bits(max(prof.v_bits, prof.e_bits + r_bits) + 1),
        "m": prof.blind_bits(prof.m_bits + 1),
        "r": r_bits,
        "r_blind": prof.blind_bits(r_bits),
        "alpha": prof.blind_bits(prof.m_bits + r_bits + 4),
    }


def generate_proof(credential: Credential, master_secret: MasterSecret, proof_request: ProofRequest,
                   cred_def: CredentialDefinition, rng: random.Random | None = None) -> Proof:
    rng = rng or system_rng()
    if proof_request.issuer_constraints not in (None, credential.cred_def_id):
        raise InvalidArgument("credential does not satisfy the issuer constraint")
    if credential.cred_def_id != cred_def.id:
        raise InvalidArgument("credential belongs to another credential definition")
    names = cred_def.attribute_names
    for attr in proof_request.requested_revealed:
        if attr not in names:
            raise InvalidArgument(f"unknown attribute {attr!r}")
    for pred in proof_request.predicates:
        if pred.attribute not in names or pred.attribute == MASTER_SECRET:
            raise InvalidArgument(f"cannot predicate on {pred.attribute!r}")
        raw = credential.raw_values[pred.attribute]
        if not isinstance(raw, int) or isinstance(raw, bool):
            raise PredicateUnsatisfied(f"{pred.attribute!r} is not numeric")
        if raw < pred.threshold:
            raise PredicateUnsatisfied(f"{pred.attribute} >= {pred.threshold} does not hold")

    prof = cred_def.profile
    pk = cred_def.public_key
    n = pk.n
    sz = _sizes(prof)
    values = dict(credential.attribute_values)
    values[MASTER_SECRET] = master_secret.m1
    revealed = {a: credential.raw_values[a] for a in proof_request.requested_revealed}
    hidden = [a for a in names if a not in revealed]

    r_A = _rand_bits(rng, sz["r_A"])
    A_prime = credential.A * powmod(pk.S, r_A, n) % n
    e_prime = credential.e - (1 << (prof.e_bits - 1))
    v_prime = credential.v - credential.e * r_A

    e_t = _rand_bits(rng, sz["e"])
    v_t = _rand_bits(rng, sz["v"])
    m_t = {a: _rand_bits(rng, sz["m"]) for a in hidden}
    T = powmod(A_prime, e_t, n) * powmod(pk.S, v_t, n) % n
    T = T * multi_exp(((cred_def.base(a), m_t[a]) for a in hidden), n) % n

    pred_secrets = []
    pred_parts = []
    for pred in proof_request.predicates:
        m = values[pred.attribute]
        delta = credential.raw_values[pred.attribute] - pred.threshold
        u = four_square_decompose(delta)
        r = [_rand_bits(rng, sz["r"]) for _ in range(4)]
        r_delta = _rand_bits(rng, sz["r"])
        T_i = [commit(pk.Z, pk.S, n, u[i], r[i]) for i in range(4)]
        T_delta = commit(pk.Z, pk.S, n, delta, r_delta)
        u_t = [_rand_bits(rng, sz["m"]) for _ in range(4)]
        r_t = [_rand_bits(rng, sz["r_blind"]) for _ in range(4)]
        r_delta_t = _rand_bits(rng, sz["r_blind"])
        alpha_t = _rand_bits(rng, sz["alpha"])
        T_bar = [commit(pk.Z, pk.S, n, u_t[i], r_t[i]) for i in range(4)]
        T_bar_delta = commit(pk.Z, pk.S, n, m_t[pred.attribute], r_delta_t)
        Q = multi_exp(zip(T_i, u_t), n) * powmod(pk.S, alpha_t, n) % n
        pred_parts.append([pred.attribute, pred.threshold, T_i, T_delta, T_bar, T_bar_delta, Q])
        pred_secrets.append((pred, u, r, r_delta, T_i, T_delta, u_t, r_t, r_delta_t, alpha_t, m))

    c = fiat_shamir_challenge(_proof_transcript(cred_def.id, proof_request.nonce, revealed, A_prime, T, pred_parts))

    predicate_proofs = []
    for pred, u, r, r_delta, T_i, T_delta, u_t, r_t, r_delta_t, alpha_t, m in pred_secrets:
        alpha = r_delta - sum(ui * ri for ui, ri in zip(u, r))
        predicate_proofs.append(PredicateProof(
            attribute=pred.attribute,
            threshold=pred.threshold,
            T=tuple(T_i),
            T_delta=T_delta,
            u_hat=tuple(u_t[i] + c * u[i] for i in range(4)),
            r_hat=tuple(r_t[i] + c * r[i] for i in range(4)),
            r_delta_hat=r_delta_t + c * r_delta,
            alpha_hat=alpha_t + c * alpha,
        ))
    return Proof(
        cred_def_id=cred_def.id,
        nonce=proof_request.nonce,
        revealed_values=revealed,
        A_prime=A_prime,
        e_hat=e_t + c * e_prime,
        v_hat=v_t + c * v_prime,
        m_hat={a: m_t[a] + c * values[a] for a in hidden},
        predicate_proofs=tuple(predicate_proofs),
        challenge=c,
    )


@dataclass(frozen=True)
class VerificationResult:
    accepted: bool
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.accepted


ACCEPT = VerificationResult(True)

RevocationLookup = Callable[[str, int], bool]


def verify_proof(proof: Proof, proof_request: ProofRequest, cred_def: CredentialDefinition,
                 revocation_lookup: RevocationLookup | None = None) -> VerificationResult:
    """Accept iff nonce, structure, challenge and revocation status all check out."""
    if proof.nonce != proof_request.nonce:
        return VerificationResult(False, "stale-nonce")
    if proof.cred_def_id != cred_def.id or proof_request.issuer_constraints not in (None, cred_def.id):
        return VerificationResult(False, "issuer-mismatch")
    names = cred_def.attribute_names
    if set(proof.revealed_values) != set(proof_request.requested_revealed):
        return VerificationResult(False, "revealed-mismatch")
    expected_preds = [(p.attribute, p.threshold) for p in proof_request.predicates]
    got_preds = [(p.attribute, p.threshold) for p in proof.predicate_proofs]
    if expected_preds != got_preds:
        return VerificationResult(False, "predicate-failure")
    hidden = [a for a in names if a not in proof.revealed_values]
    if set(proof.m_hat) != set(hidden) or any(p.attribute not in hidden for p in proof.predicate_proofs):
        return VerificationResult(False, "malformed")

    prof = cred_def.profile
    pk = cred_def.public_key
    n = pk.n
    sz = _sizes(prof)
    c = proof.challenge
    # responses must stay within mask size + challenge contribution
    if not 0 <= proof.e_hat < (1 << (sz["e"] + 1)):
        return VerificationResult(False, "challenge-mismatch")
    try:
        revealed_enc = {a: encode_attribute(v, n) for a, v in proof.revealed_values.items()}
        A_prime = proof.A_prime % n
        denom = multi_exp(((cred_def.base(a), m) for a, m in revealed_enc.items()), n)
        denom = denom * powmod(A_prime, 1 << (prof.e_bits - 1), n) % n
        base = pk.Z * invert(denom, n) % n
        T_hat = powmod(base, -c, n) * powmod(A_prime, proof.e_hat, n) % n
        T_hat = T_hat * powmod(pk.S, proof.v_hat, n) % n
        T_hat = T_hat * multi_exp(((cred_def.base(a), proof.m_hat[a]) for a in hidden), n) % n
        pred_parts = []
        for pp in proof.predicate_proofs:
            T_bar = [powmod(pp.T[i], -c, n) * commit(pk.Z, pk.S, n, pp.u_hat[i], pp.r_hat[i]) % n
                     for i in range(4)]
            shifted = pp.T_delta * powmod(pk.Z, pp.threshold, n) % n
            T_bar_delta = powmod(shifted, -c, n) * commit(
                pk.Z, pk.S, n, proof.m_hat[pp.attribute], pp.r_delta_hat) % n
            Q = powmod(pp.T_delta, -c, n) * multi_exp(zip(pp.T, pp.u_hat), n) % n
            Q = Q * powmod(pk.S, pp.alpha_hat, n) % n
            pred_parts.append([pp.attribute, pp.threshold, list(pp.T), pp.T_delta, T_bar, T_bar_delta, Q])
    except (ZeroDivisionError, InvalidArgument, ValueError, TypeError):
        return VerificationResult(False, "malformed")
    c_hat = fiat_shamir_challenge(_proof_transcript(
        cred_def.id, proof.nonce, proof.revealed_values, proof.A_prime, T_hat, pred_parts))
    if c_hat != c:
        return VerificationResult(False, "challenge-mismatch")
    if revocation_lookup is not None:
        index = proof.revealed_values.get(REVOCATION_INDEX)
        if not isinstance(index, int):
            return VerificationResult(False, "revocation-unverifiable")
        if revocation_lookup(cred_def.id, index):
            return VerificationResult(False, "revoked")
    return ACCEPT

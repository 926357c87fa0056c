"""Number theory for the credential and commitment layer.

Prime generation, the discrete-log group (Gamma, rho, g, h), the issuer's
RSA-style key over a product of safe primes, commitments, four-square
decomposition and Fiat-Shamir challenges.  All randomness comes from a
caller-supplied ``random.Random``-compatible source.
"""

from __future__ import annotations

import hashlib
import math
import random
import secrets
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import gmpy2

from . import canonical
from .errors import GenerationTimeout, InvalidArgument

MR_ROUNDS = 40
DEFAULT_ATTEMPTS = 2_000_000

_SMALL_PRIMES = [p for p in range(3, 2000) if all(p % q for q in range(2, math.isqrt(p) + 1))]


def system_rng() -> random.Random:
    return secrets.SystemRandom()


def powmod(base: int, exp: int, mod: int) -> int:
    """``base ** exp % mod`` for any sign of ``exp`` (negative means inverse)."""
    return int(gmpy2.powmod(base, exp, mod))


def invert(x: int, mod: int) -> int:
    return int(gmpy2.invert(x, mod))


# --------------------------------------------------------------------------
# profiles
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SecurityProfile:
    """Bit-lengths for every randomly drawn quantity.

    ``e_bits`` is the bit position of the credential prime's range start and
    ``e_range_bits`` the width of that range, so ``e`` lies in
    ``[2**(e_bits-1), 2**(e_bits-1) + 2**e_range_bits]``.
    """

    name: str
    rho_bits: int
    b_bits: int
    issuer_prime_bits: int
    e_bits: int
    e_range_bits: int
    v_bits: int
    m_bits: int
    stat_bits: int
    challenge_bits: int = 256
    hash_id: str = "sha256"

    def __post_init__(self):
        for name in ("rho_bits", "b_bits", "issuer_prime_bits", "e_bits",
                     "e_range_bits", "v_bits", "m_bits", "stat_bits"):
            if getattr(self, name) < 4:
                raise InvalidArgument(f"{name} must be >= 4")
        if self.hash_id != "sha256":
            raise InvalidArgument("only sha256 is supported")
        if self.e_range_bits >= self.e_bits - 1:
            raise InvalidArgument("e range must sit above its start")

    @property
    def n_bits(self) -> int:
        return 2 * self.issuer_prime_bits + 2

    def blind_bits(self, secret_bits: int) -> int:
        """Size of a sigma-protocol mask hiding a ``secret_bits`` witness."""
        return secret_bits + self.challenge_bits + self.stat_bits


# sizes follow the CL/anoncreds parameterisation (2048-bit modulus)
DEFAULT_PROFILE = SecurityProfile(
    name="default",
    rho_bits=256,
    b_bits=1376,
    issuer_prime_bits=1024,
    e_bits=597,
    e_range_bits=119,
    v_bits=2724,
    m_bits=256,
    stat_bits=80,
)

TEST_PROFILE = SecurityProfile(
    name="test",
    rho_bits=8,
    b_bits=8,
    issuer_prime_bits=8,
    e_bits=16,
    e_range_bits=10,
    v_bits=40,
    m_bits=32,
    stat_bits=16,
)

PROFILES = {p.name: p for p in (DEFAULT_PROFILE, TEST_PROFILE)}


def get_profile(name: str) -> SecurityProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise InvalidArgument(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None


# --------------------------------------------------------------------------
# primes
# --------------------------------------------------------------------------

def is_probable_prime(n: int, rng: random.Random | None = None, rounds: int = MR_ROUNDS) -> bool:
    """Miller-Rabin with ``rounds`` random bases (after trial division)."""
    if n < 2:
        return False
    if n in (2, 3):
        return True
    if n % 2 == 0:
        return False
    for p in _SMALL_PRIMES:
        if n == p:
            return True
        if n % p == 0:
            return False
    rng = rng or system_rng()
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = powmod(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _random_odd(bits: int, rng: random.Random) -> int:
    return rng.getrandbits(bits) | (1 << (bits - 1)) | 1


def random_prime(bits: int, rng: random.Random, attempts: int = DEFAULT_ATTEMPTS) -> int:
    if bits < 2:
        raise InvalidArgument("prime needs at least 2 bits")
    if bits == 2:
        return rng.choice((2, 3))
    for _ in range(attempts):
        candidate = _random_odd(bits, rng)
        if is_probable_prime(candidate, rng):
            return candidate
    raise GenerationTimeout(f"no {bits}-bit prime in {attempts} attempts")


def random_safe_prime(bits: int, rng: random.Random, attempts: int = DEFAULT_ATTEMPTS) -> tuple[int, int]:
    """Return ``(p', p)`` with ``p'`` a ``bits``-bit prime and ``p = 2p' + 1`` prime."""
    if bits <= 10:
        # few enough candidates to test each one directly
        for _ in range(attempts):
            q = _random_odd(bits, rng)
            if is_probable_prime(q, rng) and is_probable_prime(2 * q + 1, rng):
                return q, 2 * q + 1
        raise GenerationTimeout(f"no {bits}-bit safe prime in {attempts} attempts")
    window = 4096
    tried = 0
    while tried < attempts:
        base = _random_odd(bits, rng)
        # sieve q = base + 2k over the window, rejecting k where q or 2q+1
        # has a small factor
        alive = bytearray(b"\x01") * window
        for sp in _SMALL_PRIMES:
            r = base % sp
            inv2 = (sp + 1) // 2  # 2^-1 mod sp
            k_q = (-r * inv2) % sp
            alive[k_q::sp] = bytes(len(range(k_q, window, sp)))
            # 2(base + 2k) + 1 = 0  <=>  k = -(2r + 1) * 4^-1
            k_p = (-(2 * r + 1) * inv2 * inv2) % sp
            alive[k_p::sp] = bytes(len(range(k_p, window, sp)))
        for k in range(window):
            if not alive[k]:
                continue
            tried += 1
            q = base + 2 * k
            if q.bit_length() != bits:
                break
            p = 2 * q + 1
            if powmod(2, q - 1, q) != 1 or powmod(2, p - 1, p) != 1:
                continue
            if is_probable_prime(q, rng) and is_probable_prime(p, rng):
                return q, p
    raise GenerationTimeout(f"no {bits}-bit safe prime in {attempts} attempts")


def prime_in_range(start: int, width: int, rng: random.Random, attempts: int = DEFAULT_ATTEMPTS) -> int:
    """Random prime in ``[start, start + width]``."""
    for _ in range(attempts):
        candidate = start + rng.randrange(width + 1)
        if is_probable_prime(candidate, rng):
            return candidate
    raise GenerationTimeout("no prime in range")


# --------------------------------------------------------------------------
# public group parameters
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GroupParams:
    Gamma: int
    rho: int
    g: int
    h: int

    def to_record(self) -> dict:
        return {"Gamma": self.Gamma, "rho": self.rho, "g": self.g, "h": self.h}

    @classmethod
    def from_record(cls, rec: dict) -> "GroupParams":
        return cls(rec["Gamma"], rec["rho"], rec["g"], rec["h"])


def gen_group_params(profile: SecurityProfile, rng: random.Random | None = None,
                     attempts: int = DEFAULT_ATTEMPTS) -> GroupParams:
    rng = rng or system_rng()
    rho = random_prime(profile.rho_bits, rng, attempts)
    for _ in range(attempts):
        b = rng.getrandbits(profile.b_bits) | (1 << (profile.b_bits - 1))
        if b % rho == 0:
            continue
        Gamma = b * rho + 1
        if is_probable_prime(Gamma, rng):
            break
    else:
        raise GenerationTimeout("no prime Gamma = b*rho + 1 found")
    return group_params_from(Gamma, rho, rng, attempts)


def group_params_from(Gamma: int, rho: int, rng: random.Random,
                      attempts: int = DEFAULT_ATTEMPTS, g_prime: int | None = None) -> GroupParams:
    """Finish steps 2-3 for a known ``Gamma = b*rho + 1``."""
    if (Gamma - 1) % rho:
        raise InvalidArgument("rho must divide Gamma - 1")
    b = (Gamma - 1) // rho
    if b % rho == 0:
        raise InvalidArgument("rho must not divide b")
    for _ in range(attempts):
        gp = g_prime if g_prime is not None else rng.randrange(2, Gamma)
        g = powmod(gp, b, Gamma)
        if g != 1:
            break
        if g_prime is not None:
            raise InvalidArgument("g'^b = 1 for the supplied g'")
    else:
        raise GenerationTimeout("no generator found")
    r = rng.randrange(1, rho)
    return GroupParams(Gamma=Gamma, rho=rho, g=g, h=powmod(g, r, Gamma))


# --------------------------------------------------------------------------
# issuer keys
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class IssuerPublicKey:
    n: int
    S: int
    Z: int
    R: tuple[int, ...]
    P: dict = field(default_factory=dict)

    @property
    def l(self) -> int:
        return len(self.R)

    def to_record(self) -> dict:
        return {"n": self.n, "S": self.S, "Z": self.Z, "R": list(self.R), "P": dict(self.P)}

    @classmethod
    def from_record(cls, rec: dict) -> "IssuerPublicKey":
        return cls(n=rec["n"], S=rec["S"], Z=rec["Z"], R=tuple(rec["R"]), P=dict(rec["P"]))


@dataclass(frozen=True)
class IssuerSecretKey:
    p: int
    q: int
    x_Z: int
    x_R: tuple[int, ...]

    @property
    def p_prime(self) -> int:
        return (self.p - 1) // 2

    @property
    def q_prime(self) -> int:
        return (self.q - 1) // 2

    @property
    def order(self) -> int:
        """Order of the quadratic-residue subgroup, ``p'q'``."""
        return self.p_prime * self.q_prime

    def to_record(self) -> dict:
        return {"p": self.p, "q": self.q, "x_Z": self.x_Z, "x_R": list(self.x_R)}

    @classmethod
    def from_record(cls, rec: dict) -> "IssuerSecretKey":
        return cls(p=rec["p"], q=rec["q"], x_Z=rec["x_Z"], x_R=tuple(rec["x_R"]))


@dataclass(frozen=True)
class IssuerKeyPair:
    public: IssuerPublicKey
    secret: IssuerSecretKey


def random_qr(n: int, rng: random.Random) -> int:
    """Random quadratic residue coprime to ``n``."""
    while True:
        x = rng.randrange(2, n - 1)
        if math.gcd(x, n) == 1:
            s = x * x % n
            if s != 1:
                return s


def gen_issuer_keys(l: int, profile: SecurityProfile, rng: random.Random | None = None,
                    attempts: int = DEFAULT_ATTEMPTS, description: dict | None = None) -> IssuerKeyPair:
    if l < 1:
        raise InvalidArgument("need at least one attribute base")
    rng = rng or system_rng()
    p_prime, p = random_safe_prime(profile.issuer_prime_bits, rng, attempts)
    while True:
        q_prime, q = random_safe_prime(profile.issuer_prime_bits, rng, attempts)
        if q_prime != p_prime:
            break
    return issuer_keys_from_primes(p_prime, q_prime, l, rng, description)


def issuer_keys_from_primes(p_prime: int, q_prime: int, l: int, rng: random.Random,
                            description: dict | None = None) -> IssuerKeyPair:
    """Setup steps 2-4 for known safe-prime halves ``p'``, ``q'``."""
    if l < 1:
        raise InvalidArgument("need at least one attribute base")
    p, q = 2 * p_prime + 1, 2 * q_prime + 1
    if p_prime == q_prime or not all(is_probable_prime(x, rng) for x in (p_prime, q_prime, p, q)):
        raise InvalidArgument("p', q' must be distinct Sophie Germain primes")
    n = p * q
    order = p_prime * q_prime
    # a square of a random unit generates QR_n unless its order collapses
    while True:
        S = random_qr(n, rng)
        if powmod(S, p_prime, n) != 1 and powmod(S, q_prime, n) != 1:
            break
    x_Z = rng.randrange(2, order)
    x_R = tuple(rng.randrange(2, order) for _ in range(l))
    public = IssuerPublicKey(
        n=n,
        S=S,
        Z=powmod(S, x_Z, n),
        R=tuple(powmod(S, x, n) for x in x_R),
        P=dict(description or {"l": l}),
    )
    return IssuerKeyPair(public=public, secret=IssuerSecretKey(p=p, q=q, x_Z=x_Z, x_R=x_R))


# --------------------------------------------------------------------------
# proofs plumbing
# --------------------------------------------------------------------------

def fiat_shamir_challenge(transcript: Sequence) -> int:
    """SHA-256 over the canonical encoding of the ordered transcript items."""
    items = list(transcript)
    if not items:
        raise InvalidArgument("empty transcript")
    return int.from_bytes(hashlib.sha256(canonical.encode(items)).digest(), "big")


def commit(base1: int, base2: int, modulus: int, m: int, r: int) -> int:
    if modulus <= 1:
        raise InvalidArgument("modulus must exceed 1")
    return powmod(base1, m, modulus) * powmod(base2, r, modulus) % modulus


def multi_exp(pairs: Iterable[tuple[int, int]], modulus: int) -> int:
    acc = 1
    for base, exp in pairs:
        acc = acc * powmod(base, exp, modulus) % modulus
    return acc


def _two_squares_prime(p: int) -> tuple[int, int]:
    """Write a prime ``p = 1 (mod 4)`` as ``a^2 + b^2`` (Hermite-Serret)."""
    for c in range(2, p):
        if powmod(c, (p - 1) // 2, p) == p - 1:
            t = powmod(c, (p - 1) // 4, p)
            break
    a, b = p, t
    limit = math.isqrt(p)
    while b > limit:
        a, b = b, a % b
    rest = p - b * b
    c = math.isqrt(rest)
    return b, c


def _two_squares(x: int) -> tuple[int, int] | None:
    if x == 0:
        return 0, 0
    if x == 1:
        return 1, 0
    if x == 2:
        return 1, 1
    r = math.isqrt(x)
    if r * r == x:
        return r, 0
    if x % 4 == 1 and is_probable_prime(x, random.Random(x)):
        return _two_squares_prime(x)
    return None


def four_square_decompose(x: int) -> tuple[int, int, int, int]:
    """``(w1, w2, w3, w4)`` with ``w1^2 + w2^2 + w3^2 + w4^2 == x``."""
    if x < 0:
        raise InvalidArgument("cannot decompose a negative integer")
    if x < 4:
        return {0: (0, 0, 0, 0), 1: (1, 0, 0, 0), 2: (1, 1, 0, 0), 3: (1, 1, 1, 0)}[x]
    # strip powers of four; (2a)^2 = 4a^2
    scale = 1
    while x % 4 == 0:
        x //= 4
        scale *= 2
    r = math.isqrt(x)
    # descending search for w1, w2 whose remainder is a sum of two squares
    # that we can split directly (0, 1, 2, a square, or a prime 1 mod 4)
    for w1 in range(r, -1, -1):
        rest1 = x - w1 * w1
        for w2 in range(math.isqrt(rest1), -1, -1):
            rest2 = rest1 - w2 * w2
            pair = _two_squares(rest2)
            if pair is not None:
                w3, w4 = pair
                return (w1 * scale, w2 * scale, w3 * scale, w4 * scale)
            if rest2 > 64 and w2 < math.isqrt(rest1) - 64:
                break
    raise AssertionError("four-square search exhausted")  # Lagrange: unreachable

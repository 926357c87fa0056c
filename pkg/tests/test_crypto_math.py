import math
import random

import pytest
from hypothesis import given, strategies as st

from tradechain.crypto_math import (
    DEFAULT_PROFILE, TEST_PROFILE, SecurityProfile, commit, fiat_shamir_challenge, four_square_decompose,
    gen_group_params, gen_issuer_keys, get_profile, group_params_from, invert, is_probable_prime,
    issuer_keys_from_primes, multi_exp, prime_in_range, random_prime, random_safe_prime,
)
from tradechain.errors import InvalidArgument


def naive_prime(n):
    return n >= 2 and all(n % d for d in range(2, math.isqrt(n) + 1))


def test_primality_matches_trial_division():
    r = random.Random(0)
    for n in range(0, 5000):
        assert is_probable_prime(n, r) == naive_prime(n), n


def test_carmichael_numbers_rejected():
    for n in (561, 1105, 1729, 2465, 2821, 6601, 8911, 41041, 825265):
        assert not is_probable_prime(n)


def test_random_prime_bit_length():
    r = random.Random(3)
    for bits in (8, 16, 64):
        p = random_prime(bits, r)
        assert p.bit_length() == bits
        assert naive_prime(p) if bits <= 16 else is_probable_prime(p)


def test_safe_prime_shape():
    r = random.Random(5)
    pp, p = random_safe_prime(12, r)
    assert p == 2 * pp + 1
    assert naive_prime(pp) and naive_prime(p)


def test_prime_in_range():
    r = random.Random(8)
    p = prime_in_range(1 << 15, 1 << 10, r)
    assert (1 << 15) <= p <= (1 << 15) + (1 << 10)
    assert naive_prime(p)


def test_invert():
    assert invert(3, 7) * 3 % 7 == 1
    with pytest.raises(Exception):
        invert(6, 9)


def test_profiles():
    assert DEFAULT_PROFILE.rho_bits == 256
    assert DEFAULT_PROFILE.b_bits == 1376
    assert DEFAULT_PROFILE.issuer_prime_bits == 1024
    assert get_profile("test") is TEST_PROFILE
    with pytest.raises(InvalidArgument):
        get_profile("nope")
    with pytest.raises(InvalidArgument):
        SecurityProfile("tiny", 3, 8, 8, 16, 10, 40, 32, 16)


def test_group_params_toy_oracle():
    # rho=5, b=6 gives Gamma=31; g'=3 gives g=3^6 mod 31
    gp = group_params_from(31, 5, random.Random(1), g_prime=3)
    assert gp.Gamma == 31 and gp.rho == 5
    assert gp.g == pow(3, 6) % 31 == 16
    powers = [pow(16, k, 31) for k in range(1, 6)]
    assert powers[-1] == 1 and 1 not in powers[:-1]
    assert gp.h in powers


def test_group_params_rejects_bad_inputs():
    with pytest.raises(InvalidArgument):
        group_params_from(31, 7, random.Random(1))
    with pytest.raises(InvalidArgument):
        group_params_from(51, 5, random.Random(1))  # b = 10 is a multiple of rho


def test_group_params_default_profile_sizes():
    gp = gen_group_params(DEFAULT_PROFILE, random.Random(2))
    assert gp.rho.bit_length() == 256
    assert 1630 <= gp.Gamma.bit_length() <= 1633
    assert pow(gp.g, gp.rho, gp.Gamma) == 1 and gp.g != 1
    b = (gp.Gamma - 1) // gp.rho
    assert b % gp.rho != 0


@pytest.mark.parametrize("seed", range(10))
def test_group_params_invariants(seed):
    gp = gen_group_params(TEST_PROFILE, random.Random(seed))
    assert is_probable_prime(gp.Gamma) and is_probable_prime(gp.rho)
    assert (gp.Gamma - 1) % gp.rho == 0
    assert gp.g != 1 and pow(gp.g, gp.rho, gp.Gamma) == 1
    assert any(pow(gp.g, r, gp.Gamma) == gp.h for r in range(1, gp.rho))


def discrete_log(base, target, n, order):
    acc = 1
    for x in range(order):
        if acc == target:
            return x
        acc = acc * base % n
    return None


def test_issuer_keys_toy_oracle():
    kp = issuer_keys_from_primes(5, 11, 3, random.Random(4))
    assert (kp.secret.p, kp.secret.q, kp.public.n) == (11, 23, 253)
    order = 5 * 11
    assert discrete_log(kp.public.S, kp.public.Z, 253, order) is not None
    for R in kp.public.R:
        assert discrete_log(kp.public.S, R, 253, order) is not None
    # S is a square mod 253
    assert any(x * x % 253 == kp.public.S for x in range(253))


def test_issuer_keys_single_base():
    kp = issuer_keys_from_primes(5, 11, 1, random.Random(4))
    assert len(kp.public.R) == 1


def test_issuer_keys_reject_non_safe_primes():
    with pytest.raises(InvalidArgument):
        issuer_keys_from_primes(7, 11, 2, random.Random(0))  # 2*7+1 = 15
    with pytest.raises(InvalidArgument):
        issuer_keys_from_primes(5, 5, 2, random.Random(0))


@pytest.mark.parametrize("seed", range(5))
def test_issuer_keys_invariants(seed):
    kp = gen_issuer_keys(4, TEST_PROFILE, random.Random(seed))
    pk, sk = kp.public, kp.secret
    assert pk.n == sk.p * sk.q
    assert sk.p == 2 * sk.p_prime + 1 and sk.q == 2 * sk.q_prime + 1
    assert pk.Z == pow(pk.S, sk.x_Z, pk.n)
    assert all(R == pow(pk.S, x, pk.n) for R, x in zip(pk.R, sk.x_R))
    assert all(2 <= x <= sk.order - 1 for x in (sk.x_Z, *sk.x_R))
    # quadratic residue modulo both prime factors
    assert pow(pk.S, (sk.p - 1) // 2, sk.p) == 1 and pow(pk.S, (sk.q - 1) // 2, sk.q) == 1
    assert "p" not in pk.to_record() and "q" not in pk.to_record()


def test_fiat_shamir():
    assert fiat_shamir_challenge([1, "a", b"x"]) == fiat_shamir_challenge([1, "a", b"x"])
    assert fiat_shamir_challenge([1, "a", b"x"]) != fiat_shamir_challenge([1, "a", b"y"])
    assert fiat_shamir_challenge([1, 2]) != fiat_shamir_challenge([12])
    with pytest.raises(InvalidArgument):
        fiat_shamir_challenge([])


def test_commit():
    assert commit(5, 7, 31, 0, 0) == 1
    assert commit(16, 8, 31, 2, 1) == (16 * 16 * 8) % 31
    assert commit(16, 8, 31, 2, 1) == commit(16, 8, 31, 2, 1)
    with pytest.raises(InvalidArgument):
        commit(2, 3, 1, 1, 1)


def test_multi_exp():
    assert multi_exp([(2, 3), (3, 2)], 1000) == 72
    assert multi_exp([], 7) == 1


def brute_four_squares(x):
    r = math.isqrt(x)
    for a in range(r + 1):
        for b in range(a, r + 1):
            for c in range(b, r + 1):
                d2 = x - a * a - b * b - c * c
                if d2 < 0:
                    break
                if math.isqrt(d2) ** 2 == d2:
                    return True
    return False


def test_four_squares_small():
    assert four_square_decompose(0) == (0, 0, 0, 0)
    for x in (7, 10):
        w = four_square_decompose(x)
        assert sum(v * v for v in w) == x
        assert brute_four_squares(x)
    with pytest.raises(InvalidArgument):
        four_square_decompose(-1)


def test_four_squares_exhaustive_range():
    for x in range(0, 3000):
        assert sum(v * v for v in four_square_decompose(x)) == x


@given(st.integers(min_value=0, max_value=2 ** 300))
def test_four_squares_property(x):
    w = four_square_decompose(x)
    assert len(w) == 4 and all(v >= 0 for v in w)
    assert sum(v * v for v in w) == x

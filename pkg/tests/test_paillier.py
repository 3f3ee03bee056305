import math
import random

import pytest

from fabricfl.paillier import (
    Ciphertext,
    CiphertextError,
    KeyMismatchError,
    add_ciphertexts,
    ciphertext_from_bytes,
    ciphertext_to_bytes,
    decrypt,
    encrypt,
    generate_keypair,
    keypair_from_primes,
    load_keypair,
    load_public_key,
    multiply_plain,
    save_keypair,
    save_public_key,
)

from conftest import cached_keypair


class TestKeygen:
    def test_forced_primes_3_5(self):
        kp = keypair_from_primes(3, 5)
        assert kp.public.n == 15
        assert kp.public.g == 16
        assert kp.lam == 4

    def test_keypair_invariants(self, kp128):
        kp = kp128
        assert kp.p != kp.q
        assert kp.p * kp.q == kp.public.n
        assert kp.public.n.bit_length() >= kp.public.key_bits - 1
        assert math.gcd(kp.public.n, (kp.p - 1) * (kp.q - 1)) == 1

    def test_roundtrip_zero_512(self, kp512):
        assert decrypt(kp512, encrypt(kp512.public, 0)) == 0

    def test_rejects_small_and_odd_bits(self):
        with pytest.raises(ValueError):
            generate_keypair(8)
        with pytest.raises(ValueError):
            generate_keypair(17)

    def test_successive_keys_distinct(self):
        rng = random.Random(7)
        moduli = {generate_keypair(64, rng=rng).public.n for _ in range(20)}
        assert len(moduli) == 20

    def test_from_primes_rejects_composite(self):
        with pytest.raises(ValueError):
            keypair_from_primes(9, 5)
        with pytest.raises(ValueError):
            keypair_from_primes(5, 5)


class TestEncryptDecrypt:
    def test_textbook_hand_computation(self):
        # n = 15: c = g^7 * 2^15 mod 225 = 83 by direct arithmetic.
        kp = keypair_from_primes(3, 5)
        n_sq = kp.public.n_squared
        value = pow(kp.public.g, 7, n_sq) * pow(2, kp.public.n, n_sq) % n_sq
        assert value == 83
        assert decrypt(kp, Ciphertext(value=value, public_key=kp.public)) == 7

    def test_roundtrip_small_modulus(self):
        kp = keypair_from_primes(3, 5)
        for m in range(15):
            assert decrypt(kp, encrypt(kp.public, m)) == m

    def test_boundary_plaintext(self, kp128):
        n = kp128.public.n
        assert decrypt(kp128, encrypt(kp128.public, n - 1)) == n - 1

    def test_plaintext_out_of_range(self, kp128):
        with pytest.raises(ValueError):
            encrypt(kp128.public, kp128.public.n)
        with pytest.raises(ValueError):
            encrypt(kp128.public, -1)

    def test_fresh_mode_distinct_ciphertexts(self, kp128):
        a = encrypt(kp128.public, 5)
        b = encrypt(kp128.public, 5)
        assert a.value != b.value
        assert decrypt(kp128, a) == decrypt(kp128, b) == 5

    def test_fresh_mode_no_collisions_in_1000(self, kp128):
        values = {encrypt(kp128.public, 9).value for _ in range(1000)}
        assert len(values) == 1000

    def test_deterministic_mode(self, kp128):
        a = encrypt(kp128.public, 5, mode="deterministic", session_seed=77)
        b = encrypt(kp128.public, 5, mode="deterministic", session_seed=77)
        c = encrypt(kp128.public, 5, mode="deterministic", session_seed=78)
        assert a == b
        assert a.value != c.value
        assert decrypt(kp128, a) == decrypt(kp128, c) == 5

    def test_deterministic_mode_requires_seed(self, kp128):
        with pytest.raises(ValueError):
            encrypt(kp128.public, 5, mode="deterministic")

    def test_unknown_mode(self, kp128):
        with pytest.raises(ValueError):
            encrypt(kp128.public, 5, mode="chaotic")

    def test_decrypt_key_mismatch(self, kp128):
        other = cached_keypair(128, seed=99)
        ct = encrypt(other.public, 3)
        with pytest.raises(KeyMismatchError):
            decrypt(kp128, ct)

    def test_decrypt_malformed_ciphertext(self, kp128):
        n = kp128.public.n
        too_big = Ciphertext(value=kp128.public.n_squared, public_key=kp128.public)
        with pytest.raises(CiphertextError):
            decrypt(kp128, too_big)
        not_coprime = Ciphertext(value=n, public_key=kp128.public)
        with pytest.raises(CiphertextError):
            decrypt(kp128, not_coprime)


class TestHomomorphism:
    def test_addition_examples(self, kp128):
        pub, n = kp128.public, kp128.public.n
        assert decrypt(kp128, add_ciphertexts(encrypt(pub, 3), encrypt(pub, 5))) == 8
        c = encrypt(pub, 123)
        assert decrypt(kp128, add_ciphertexts(c, encrypt(pub, 0))) == 123
        wrapped = add_ciphertexts(encrypt(pub, n - 1), encrypt(pub, 1))
        assert decrypt(kp128, wrapped) == 0

    def test_addition_random(self, kp128):
        rng = random.Random(5)
        n = kp128.public.n
        for _ in range(100):
            a, b = rng.randrange(n), rng.randrange(n)
            total = add_ciphertexts(encrypt(kp128.public, a), encrypt(kp128.public, b))
            assert decrypt(kp128, total) == (a + b) % n

    def test_scalar_examples(self, kp128):
        pub = kp128.public
        c = encrypt(pub, 17)
        assert decrypt(kp128, multiply_plain(c, 1)) == 17
        assert decrypt(kp128, multiply_plain(c, 0)) == 0
        assert decrypt(kp128, multiply_plain(encrypt(pub, 6), 4)) == 24

    def test_scalar_random(self, kp128):
        rng = random.Random(6)
        n = kp128.public.n
        for _ in range(100):
            a, k = rng.randrange(n), rng.randrange(n)
            assert decrypt(kp128, multiply_plain(encrypt(kp128.public, a), k)) == a * k % n

    def test_scalar_out_of_range(self, kp128):
        c = encrypt(kp128.public, 1)
        with pytest.raises(ValueError):
            multiply_plain(c, -1)
        with pytest.raises(ValueError):
            multiply_plain(c, kp128.public.n)

    def test_key_isolation(self, kp128):
        other = cached_keypair(128, seed=99)
        with pytest.raises(KeyMismatchError):
            add_ciphertexts(encrypt(kp128.public, 1), encrypt(other.public, 1))


class TestSerialization:
    def test_ciphertext_roundtrip(self, kp128):
        ct = encrypt(kp128.public, 12345)
        data = ciphertext_to_bytes(ct)
        parsed, end = ciphertext_from_bytes(data, kp128.public)
        assert parsed == ct
        assert end == len(data)

    def test_ciphertext_wire_layout(self, kp128):
        ct = encrypt(kp128.public, 1)
        data = ciphertext_to_bytes(ct)
        length = int.from_bytes(data[:4], "big")
        assert int.from_bytes(data[4 : 4 + length], "big") == ct.value
        assert data[4 + length :].hex() == kp128.public.key_id
        assert len(data[4 + length :]) == 16

    def test_ciphertext_wrong_key_rejected(self, kp128):
        other = cached_keypair(128, seed=99)
        data = ciphertext_to_bytes(encrypt(kp128.public, 1))
        with pytest.raises(KeyMismatchError):
            ciphertext_from_bytes(data, other.public)

    def test_ciphertext_truncated(self, kp128):
        data = ciphertext_to_bytes(encrypt(kp128.public, 1))
        with pytest.raises(CiphertextError):
            ciphertext_from_bytes(data[:-1], kp128.public)

    def test_public_key_file_roundtrip(self, kp128, tmp_path):
        path = tmp_path / "public.key"
        save_public_key(kp128.public, path)
        text = path.read_text()
        assert text.startswith(f"n={kp128.public.n}\n")
        assert f"g={kp128.public.g}" in text
        loaded = load_public_key(path)
        assert loaded == kp128.public
        assert loaded.key_id == kp128.public.key_id

    def test_keypair_file_roundtrip(self, kp128, tmp_path):
        path = tmp_path / "secret.key"
        save_keypair(kp128, path)
        loaded = load_keypair(path)
        assert loaded == kp128
        assert decrypt(loaded, encrypt(loaded.public, 42)) == 42

    def test_key_file_missing_field(self, tmp_path):
        path = tmp_path / "broken.key"
        path.write_text("n=15\n")
        with pytest.raises(ValueError):
            load_public_key(path)

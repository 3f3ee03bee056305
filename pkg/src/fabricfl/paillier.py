"""Paillier cryptosystem: additively homomorphic encryption over Z_{n^2}.

Multiplying two ciphertexts adds their plaintexts; raising a ciphertext to
a plaintext power multiplies the underlying plaintext by that scalar.
That is the whole algebra this package needs: encrypted weight vectors can
be scaled and summed by a party that never sees the weights.

Two randomness modes are supported.  ``fresh`` draws an independent
obfuscator per encryption (semantically secure).  ``deterministic``
derives the obfuscator from the plaintext and a session seed, so equal
plaintexts produce equal ciphertexts within a session; this deliberately
leaks equality and exists only for evaluation pipelines that train
classifiers directly on ciphertext-derived features.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

MILLER_RABIN_ROUNDS = 40
MIN_KEY_BITS = 16

_SMALL_PRIMES = (
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67,
    71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131, 137, 139,
)


class KeyMismatchError(ValueError):
    """Raised when an operation mixes ciphertexts from different keys."""


class CiphertextError(ValueError):
    """Raised for malformed or out-of-range ciphertext values."""


def _is_probable_prime(n: int, rng: random.Random, rounds: int = MILLER_RABIN_ROUNDS) -> bool:
    """Miller-Rabin test; error probability below 4^-rounds."""
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n == p:
            return True
        if n % p == 0:
            return False
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = pow(x, 2, n)
            if x == n - 1:
                break
        else:
            return False
    return True


def _random_prime(bits: int, rng: random.Random) -> int:
    while True:
        candidate = rng.getrandbits(bits) | (1 << (bits - 1)) | 1
        if _is_probable_prime(candidate, rng):
            return candidate


@dataclass(frozen=True)
class PaillierPublicKey:
    """Public half of a keypair: modulus n, generator g = n + 1."""

    n: int
    g: int
    key_bits: int

    @cached_property
    def n_squared(self) -> int:
        return self.n * self.n

    @cached_property
    def key_id(self) -> str:
        """16-byte digest of the (n, g) encoding, as 32 hex chars."""
        material = f"n={self.n},g={self.g}".encode()
        return hashlib.sha256(material).digest()[:16].hex()


@dataclass(frozen=True)
class PaillierKeypair:
    """Full keypair; p and q (and everything derived) must stay secret."""

    p: int
    q: int
    public: PaillierPublicKey

    def __post_init__(self) -> None:
        if self.p == self.q:
            raise ValueError("p and q must be distinct primes")
        if self.p * self.q != self.public.n:
            raise ValueError("public modulus does not match p*q")

    @cached_property
    def lam(self) -> int:
        return math.lcm(self.p - 1, self.q - 1)

    @cached_property
    def mu(self) -> int:
        # With g = n + 1, L(g^lam mod n^2) reduces to lam mod n.
        return pow(self.lam, -1, self.public.n)


@dataclass(frozen=True)
class Ciphertext:
    """Opaque residue modulo n^2, bound to the key that produced it."""

    value: int
    public_key: PaillierPublicKey

    @property
    def key_id(self) -> str:
        return self.public_key.key_id


def generate_keypair(key_bits: int, rng: random.Random | None = None) -> PaillierKeypair:
    """Generate a keypair whose modulus has at least key_bits - 1 bits.

    key_bits must be even and at least 16; tiny keys are only useful for
    tests.  The rng is injectable so that simulations can produce
    reproducible keys; it defaults to a system entropy source.
    """
    if key_bits < MIN_KEY_BITS:
        raise ValueError(f"key_bits must be >= {MIN_KEY_BITS}, got {key_bits}")
    if key_bits % 2 != 0:
        raise ValueError(f"key_bits must be even, got {key_bits}")
    rng = rng or random.SystemRandom()
    half = key_bits // 2
    while True:
        p = _random_prime(half, rng)
        q = _random_prime(half, rng)
        if p == q:
            continue
        n = p * q
        if math.gcd(n, (p - 1) * (q - 1)) != 1:
            continue
        public = PaillierPublicKey(n=n, g=n + 1, key_bits=key_bits)
        return PaillierKeypair(p=p, q=q, public=public)


def keypair_from_primes(p: int, q: int) -> PaillierKeypair:
    """Build a keypair from explicit primes (intended for tests)."""
    rng = random.Random(0)
    for value in (p, q):
        if not _is_probable_prime(value, rng):
            raise ValueError(f"{value} is not prime")
    n = p * q
    if math.gcd(n, (p - 1) * (q - 1)) != 1:
        raise ValueError("gcd(n, (p-1)(q-1)) must be 1")
    public = PaillierPublicKey(n=n, g=n + 1, key_bits=n.bit_length())
    return PaillierKeypair(p=p, q=q, public=public)


def _public_of(key: PaillierPublicKey | PaillierKeypair) -> PaillierPublicKey:
    return key.public if isinstance(key, PaillierKeypair) else key


def _session_key(session_seed: int | bytes) -> bytes:
    if isinstance(session_seed, bytes):
        return session_seed
    return str(session_seed).encode()


def _deterministic_obfuscator(n: int, m: int, session_seed: int | bytes) -> int:
    """PRF-derived r in [1, n) coprime to n; equal (seed, m) give equal r."""
    n_bytes = (n.bit_length() + 7) // 8 + 16
    key = _session_key(session_seed)
    m_bytes = m.to_bytes((m.bit_length() + 7) // 8 or 1, "big")
    for counter in range(256):
        stream = hashlib.shake_256(
            b"paillier-det-r" + key + b"|" + m_bytes + b"|" + counter.to_bytes(4, "big")
        ).digest(n_bytes)
        r = int.from_bytes(stream, "big") % (n - 1) + 1
        if math.gcd(r, n) == 1:
            return r
    raise CiphertextError("could not derive an obfuscator coprime to n")


def _fresh_obfuscator(n: int, rng: random.Random) -> int:
    for _ in range(256):
        r = rng.randrange(1, n)
        if math.gcd(r, n) == 1:
            return r
    raise CiphertextError("could not draw an obfuscator coprime to n")


def encrypt(
    key: PaillierPublicKey | PaillierKeypair,
    m: int,
    mode: str = "fresh",
    session_seed: int | bytes | None = None,
    rng: random.Random | None = None,
) -> Ciphertext:
    """Encrypt plaintext m in [0, n) as g^m * r^n mod n^2.

    mode "fresh" draws a random obfuscator; mode "deterministic" derives
    it from (session_seed, m) and requires session_seed.
    """
    public = _public_of(key)
    n, n_sq = public.n, public.n_squared
    if not 0 <= m < n:
        raise ValueError(f"plaintext must be in [0, n), got {m}")
    if mode == "fresh":
        r = _fresh_obfuscator(n, rng or random.SystemRandom())
    elif mode == "deterministic":
        if session_seed is None:
            raise ValueError("deterministic mode requires a session_seed")
        r = _deterministic_obfuscator(n, m, session_seed)
    else:
        raise ValueError(f"unknown randomness mode {mode!r}")
    # g = n + 1 makes g^m collapse to 1 + m*n mod n^2.
    value = ((1 + m * n) % n_sq) * pow(r, n, n_sq) % n_sq
    return Ciphertext(value=value, public_key=public)


def decrypt(keypair: PaillierKeypair, ct: Ciphertext) -> int:
    """Recover the plaintext: L(c^lam mod n^2) * mu mod n, L(x) = (x-1)/n."""
    public = keypair.public
    if ct.key_id != public.key_id:
        raise KeyMismatchError("ciphertext was produced under a different key")
    n, n_sq = public.n, public.n_squared
    if not 0 <= ct.value < n_sq:
        raise CiphertextError(f"ciphertext value out of range [0, n^2)")
    if math.gcd(ct.value, n_sq) != 1:
        raise CiphertextError("ciphertext is not coprime to n^2")
    ell = (pow(ct.value, keypair.lam, n_sq) - 1) // n
    return ell * keypair.mu % n


def add_ciphertexts(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    """Homomorphic addition: the product of residues decrypts to m_a + m_b."""
    if a.key_id != b.key_id:
        raise KeyMismatchError("cannot combine ciphertexts from different keys")
    n_sq = a.public_key.n_squared
    return Ciphertext(value=a.value * b.value % n_sq, public_key=a.public_key)


def multiply_plain(ct: Ciphertext, k: int) -> Ciphertext:
    """Plaintext-scalar multiplication: c^k decrypts to k * m mod n."""
    n = ct.public_key.n
    if not 0 <= k < n:
        raise ValueError(f"scalar must be in [0, n), got {k}")
    n_sq = ct.public_key.n_squared
    return Ciphertext(value=pow(ct.value, k, n_sq), public_key=ct.public_key)


# --- serialization -------------------------------------------------------

_KEY_ID_LEN = 16


def ciphertext_to_bytes(ct: Ciphertext) -> bytes:
    """4-byte big-endian length, big-endian magnitude, 16-byte key id."""
    mag = ct.value.to_bytes((ct.value.bit_length() + 7) // 8 or 1, "big")
    return len(mag).to_bytes(4, "big") + mag + bytes.fromhex(ct.key_id)


def ciphertext_from_bytes(
    data: bytes, public_key: PaillierPublicKey, offset: int = 0
) -> tuple[Ciphertext, int]:
    """Parse one serialized ciphertext, returning it and the next offset."""
    if len(data) < offset + 4:
        raise CiphertextError("truncated ciphertext: missing length prefix")
    length = int.from_bytes(data[offset : offset + 4], "big")
    end = offset + 4 + length + _KEY_ID_LEN
    if len(data) < end:
        raise CiphertextError("truncated ciphertext payload")
    value = int.from_bytes(data[offset + 4 : offset + 4 + length], "big")
    key_id = data[offset + 4 + length : end].hex()
    if key_id != public_key.key_id:
        raise KeyMismatchError("serialized ciphertext belongs to a different key")
    if value >= public_key.n_squared:
        raise CiphertextError("ciphertext value out of range for this key")
    return Ciphertext(value=value, public_key=public_key), end


def save_public_key(key: PaillierPublicKey, path: str | Path) -> None:
    Path(path).write_text(f"n={key.n}\ng={key.g}\nkey_bits={key.key_bits}\n")


def load_public_key(path: str | Path) -> PaillierPublicKey:
    fields = _parse_key_file(path, ("n", "g", "key_bits"))
    return PaillierPublicKey(n=fields["n"], g=fields["g"], key_bits=fields["key_bits"])


def save_keypair(keypair: PaillierKeypair, path: str | Path) -> None:
    Path(path).write_text(
        f"p={keypair.p}\nq={keypair.q}\nkey_bits={keypair.public.key_bits}\n"
    )


def load_keypair(path: str | Path) -> PaillierKeypair:
    fields = _parse_key_file(path, ("p", "q", "key_bits"))
    p, q = fields["p"], fields["q"]
    n = p * q
    public = PaillierPublicKey(n=n, g=n + 1, key_bits=fields["key_bits"])
    return PaillierKeypair(p=p, q=q, public=public)


def _parse_key_file(path: str | Path, expected: tuple[str, ...]) -> dict[str, int]:
    fields: dict[str, int] = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        name, _, value = line.partition("=")
        fields[name.strip()] = int(value)
    missing = [name for name in expected if name not in fields]
    if missing:
        raise ValueError(f"key file {path} is missing fields: {missing}")
    return fields

"""Fixed-point encoding of signed reals into the Paillier plaintext space.

Reals are scaled by 2^scale_bits and rounded; negatives wrap into the
upper half of Z_n, two's-complement style.  Products of two encoded
values (as produced by plaintext-scalar multiplication of a ciphertext)
carry twice the scale, which decode supports via an explicit override.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

import numpy as np

from .paillier import (
    Ciphertext,
    PaillierKeypair,
    PaillierPublicKey,
    decrypt,
    encrypt,
)

DEFAULT_SCALE_BITS = 16


@dataclass(frozen=True)
class FixedPointCodec:
    plaintext_modulus: int
    scale_bits: int = DEFAULT_SCALE_BITS

    @classmethod
    def for_key(
        cls, key: PaillierPublicKey | PaillierKeypair, scale_bits: int = DEFAULT_SCALE_BITS
    ) -> "FixedPointCodec":
        public = key.public if isinstance(key, PaillierKeypair) else key
        return cls(plaintext_modulus=public.n, scale_bits=scale_bits)

    @property
    def _half_modulus(self) -> int:
        return self.plaintext_modulus // 2

    def encode(self, x: float) -> int:
        """Map a real to round(x * 2^scale_bits) mod n."""
        if not np.isfinite(x):
            raise ValueError(f"cannot encode non-finite value {x!r}")
        scaled = round(float(x) * (1 << self.scale_bits))
        if abs(scaled) >= self._half_modulus:
            raise OverflowError(
                f"value {x} exceeds the representable range at scale_bits={self.scale_bits}"
            )
        return scaled % self.plaintext_modulus

    def decode(self, m: int, scale_bits: int | None = None) -> float:
        """Invert encode; values above n/2 decode as negatives."""
        if not 0 <= m < self.plaintext_modulus:
            raise ValueError("encoded value out of range [0, n)")
        scale = self.scale_bits if scale_bits is None else scale_bits
        centered = m if m <= self._half_modulus else m - self.plaintext_modulus
        return centered / (1 << scale)


@dataclass(frozen=True)
class CipherTensor:
    """An encrypted tensor: shape plus row-major ciphertext elements."""

    shape: tuple[int, ...]
    values: tuple[Ciphertext, ...]

    def __post_init__(self) -> None:
        expected = int(np.prod(self.shape)) if self.shape else 1
        if len(self.values) != expected:
            raise ValueError(
                f"shape {self.shape} implies {expected} elements, got {len(self.values)}"
            )

    @property
    def key_id(self) -> str:
        return self.values[0].key_id if self.values else ""


def encrypt_vector(
    key: PaillierPublicKey | PaillierKeypair,
    codec: FixedPointCodec,
    values,
    mode: str = "fresh",
    session_seed: int | bytes | None = None,
    rng: random.Random | None = None,
) -> list[Ciphertext]:
    """Encode then encrypt elementwise.

    All elements are encoded before any encryption happens, so a single
    out-of-range element aborts the whole vector with no partial output.
    """
    encoded = [codec.encode(v) for v in np.asarray(values, dtype=np.float64).ravel()]
    return [encrypt(key, m, mode=mode, session_seed=session_seed, rng=rng) for m in encoded]


def decrypt_vector(
    keypair: PaillierKeypair,
    codec: FixedPointCodec,
    ciphertexts,
    scale_bits: int | None = None,
) -> np.ndarray:
    return np.array(
        [codec.decode(decrypt(keypair, ct), scale_bits=scale_bits) for ct in ciphertexts],
        dtype=np.float64,
    )


def encrypt_tensor(
    key: PaillierPublicKey | PaillierKeypair,
    codec: FixedPointCodec,
    array: np.ndarray,
    mode: str = "fresh",
    session_seed: int | bytes | None = None,
    rng: random.Random | None = None,
) -> CipherTensor:
    arr = np.asarray(array, dtype=np.float64)
    values = encrypt_vector(key, codec, arr.ravel(), mode=mode, session_seed=session_seed, rng=rng)
    return CipherTensor(shape=tuple(arr.shape), values=tuple(values))


def decrypt_tensor(
    keypair: PaillierKeypair,
    codec: FixedPointCodec,
    tensor: CipherTensor,
    scale_bits: int | None = None,
) -> np.ndarray:
    flat = decrypt_vector(keypair, codec, tensor.values, scale_bits=scale_bits)
    return flat.reshape(tensor.shape)

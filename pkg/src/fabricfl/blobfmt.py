"""DFWU weight-blob wire format.

Layout: magic "DFWU", a 1-byte version (1), a 1-byte dtype tag
(1 = plain float64 tensors, 2 = Paillier ciphertext tensors), a 4-byte
big-endian tensor count, then per tensor a 4-byte big-endian rank,
big-endian 4-byte dims, and the payload: little-endian 64-bit reals for
plain tensors, or length-prefixed ciphertext byte strings for encrypted
ones.
"""

from __future__ import annotations

import math
import struct

import numpy as np

from .encoding import CipherTensor
from .paillier import PaillierPublicKey, ciphertext_from_bytes, ciphertext_to_bytes

MAGIC = b"DFWU"
VERSION = 1
DTYPE_PLAIN = 1
DTYPE_CIPHER = 2


class BlobFormatError(ValueError):
    """Raised when a blob does not parse as valid DFWU data."""


def encode_weights(tensors: list[np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack(">BBI", VERSION, DTYPE_PLAIN, len(tensors))]
    for tensor in tensors:
        arr = np.ascontiguousarray(tensor, dtype=np.float64)
        parts.append(_pack_dims(arr.shape))
        parts.append(arr.astype("<f8").tobytes())
    return b"".join(parts)


def encode_cipher_weights(tensors: list[CipherTensor]) -> bytes:
    parts = [MAGIC, struct.pack(">BBI", VERSION, DTYPE_CIPHER, len(tensors))]
    for tensor in tensors:
        parts.append(_pack_dims(tensor.shape))
        for ct in tensor.values:
            parts.append(ciphertext_to_bytes(ct))
    return b"".join(parts)


def decode_blob(
    data: bytes, public_key: PaillierPublicKey | None = None
) -> tuple[int, list[np.ndarray] | list[CipherTensor]]:
    """Parse a blob into (dtype tag, tensors).

    Ciphertext blobs need the matching public key to rebuild ciphertext
    objects; passing none raises for dtype 2.
    """
    if data[:4] != MAGIC:
        raise BlobFormatError("bad magic; not a DFWU blob")
    if len(data) < 10:
        raise BlobFormatError("truncated header")
    version, dtype, count = struct.unpack(">BBI", data[4:10])
    if version != VERSION:
        raise BlobFormatError(f"unsupported version {version}")
    offset = 10
    if dtype == DTYPE_PLAIN:
        tensors: list[np.ndarray] = []
        for _ in range(count):
            shape, offset = _unpack_dims(data, offset)
            n_elems = math.prod(shape)
            end = offset + 8 * n_elems
            if len(data) < end:
                raise BlobFormatError("truncated tensor payload")
            flat = np.frombuffer(data[offset:end], dtype="<f8")
            tensors.append(flat.reshape(shape).astype(np.float64))
            offset = end
        return dtype, tensors
    if dtype == DTYPE_CIPHER:
        if public_key is None:
            raise BlobFormatError("ciphertext blob requires the public key to decode")
        cipher_tensors: list[CipherTensor] = []
        for _ in range(count):
            shape, offset = _unpack_dims(data, offset)
            values = []
            for _ in range(math.prod(shape)):
                ct, offset = ciphertext_from_bytes(data, public_key, offset)
                values.append(ct)
            cipher_tensors.append(CipherTensor(shape=shape, values=tuple(values)))
        return dtype, cipher_tensors
    raise BlobFormatError(f"unknown dtype tag {dtype}")


def _pack_dims(shape) -> bytes:
    return struct.pack(">I", len(shape)) + b"".join(struct.pack(">I", d) for d in shape)


def _unpack_dims(data: bytes, offset: int) -> tuple[tuple[int, ...], int]:
    if len(data) < offset + 4:
        raise BlobFormatError("truncated tensor rank")
    (rank,) = struct.unpack(">I", data[offset : offset + 4])
    offset += 4
    if len(data) < offset + 4 * rank:
        raise BlobFormatError("truncated tensor dims")
    shape = struct.unpack(f">{rank}I", data[offset : offset + 4 * rank]) if rank else ()
    return tuple(shape), offset + 4 * rank

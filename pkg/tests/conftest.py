import random
from functools import lru_cache

import pytest

from fabricfl.paillier import generate_keypair


@lru_cache(maxsize=None)
def cached_keypair(key_bits: int, seed: int = 42):
    """Deterministic keypair shared across tests; generation is the slow part."""
    return generate_keypair(key_bits, rng=random.Random(seed))


@pytest.fixture(scope="session")
def kp64():
    return cached_keypair(64)


@pytest.fixture(scope="session")
def kp128():
    return cached_keypair(128)


@pytest.fixture(scope="session")
def kp512():
    return cached_keypair(512)

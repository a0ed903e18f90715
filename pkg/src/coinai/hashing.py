"""SHA3-512 digests and the 512-bit hash value type used across the chain."""

from __future__ import annotations

import hashlib

HASH_SIZE = 64
ZERO_HASH = bytes(HASH_SIZE)


def sha3_512(data: bytes) -> bytes:
    return hashlib.sha3_512(data).digest()


def hash_to_int(digest: bytes) -> int:
    """Read a digest as an unsigned big-endian integer (the derivation seed)."""
    return int.from_bytes(digest, "big")


def check_hash(value: bytes) -> bytes:
    if not isinstance(value, (bytes, bytearray)) or len(value) != HASH_SIZE:
        raise ValueError(f"expected a {HASH_SIZE}-byte digest")
    return bytes(value)


def stream_seed(root_seed: int, node_id: str) -> int:
    """Derive an independent 64-bit seed for one node from the root seed."""
    material = root_seed.to_bytes(8, "big") + node_id.encode("utf-8")
    return int.from_bytes(sha3_512(material)[:8], "big")

"""Deterministic derivation of independent child seeds from a master seed."""

import hashlib


def spawn_seed(master: int, *tags) -> int:
    """Derive a child seed from ``master`` and a tag path.

    Stable across platforms and processes; distinct tag paths give
    independent streams.
    """
    key = repr((int(master),) + tags).encode("utf-8")
    digest = hashlib.sha256(key).digest()
    return int.from_bytes(digest[:8], "little")

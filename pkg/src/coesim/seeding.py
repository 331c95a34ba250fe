"""Deterministic sub-seed derivation.

All randomness in a run flows from one integer seed.  Consumers derive
independent streams with subseed(seed, *labels), which hashes the seed and a
label path with SHA-256.  The scheme is stable across processes and Python
versions (unlike the builtin hash), so adding a new consumer never perturbs
the draws of existing ones.
"""

from __future__ import annotations

import hashlib


def subseed(seed: int, *labels: object) -> int:
    """Derive a 64-bit child seed for the given label path."""
    text = str(int(seed)) + "".join(f"/{label}" for label in labels)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")

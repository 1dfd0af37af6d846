"""Deterministic seed derivation for independent random streams.

Every random draw in the package flows from a named position in a seed tree:
a record's seed comes from (global seed, split, index), its box layout from
(record seed, "box"), and so on.  Streams are therefore independent of
generation order, which is what makes datasets resumable and reproducible
record by record.
"""

from __future__ import annotations

import hashlib


def derive_seed(*parts) -> int:
    """Map a tuple of labels to a 64-bit seed via SHA-256.

    Parts are joined by a separator byte after ``str`` conversion, so
    ("a", 1) and ("a1",) hash differently.
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")

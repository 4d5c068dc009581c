"""Stable 64-bit fingerprints of JSON-able configuration objects.

Used to stamp measurements and wire packages so both ends of a link can
verify they agree on array geometry, excitation, and processing settings.
"""

from __future__ import annotations

import hashlib
import json


def canonical_json(doc) -> bytes:
    """Deterministic JSON encoding: sorted keys, no whitespace."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"),
                      allow_nan=False).encode()


def fingerprint64(doc) -> int:
    """First 8 bytes of blake2b over the canonical encoding, as unsigned int."""
    digest = hashlib.blake2b(canonical_json(doc), digest_size=8).digest()
    return int.from_bytes(digest, "little")

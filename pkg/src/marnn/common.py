"""Canonical serialization and config fingerprints shared across modules."""

from __future__ import annotations

import hashlib
import json


def canonical_json(obj) -> str:
    """Stable JSON text: sorted keys, no whitespace, raw UTF-8."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_fingerprint(obj) -> str:
    """Short hex digest identifying an effective configuration."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:12]

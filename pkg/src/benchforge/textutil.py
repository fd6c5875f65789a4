"""Shared text primitives: tokenization, stable hashing, and seed derivation.

Everything here must be deterministic across runs, platforms, and process
counts; all randomness elsewhere in the pipeline is derived through
``derive_seed``.
"""
from __future__ import annotations

import hashlib
import re

# FNV-1a, 64 bit. Published constants; the offset basis doubles as the
# feature-hash seed recorded in index headers.
FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

HASH_SEED = FNV64_OFFSET


def fnv1a64(data: bytes, seed: int = FNV64_OFFSET) -> int:
    h = seed
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def derive_seed(global_seed: int, *parts: str) -> int:
    """Stable 64-bit seed for a named substream of the global seed."""
    key = ("%d|" % global_seed + "|".join(parts)).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "big")


_EDGE_PUNCT = re.compile(r"^(\W*)(.*?)(\W*)$", re.DOTALL)


def tokenize(text: str) -> list[str]:
    """Whitespace split with leading/trailing punctuation detached.

    Internal apostrophes and hyphens stay inside the token ("doesn't",
    "two-step"). Original case is preserved; callers lowercase where needed.
    """
    tokens: list[str] = []
    for chunk in text.split():
        m = _EDGE_PUNCT.match(chunk)
        lead, core, trail = m.group(1), m.group(2), m.group(3)
        tokens.extend(lead)
        if core:
            tokens.append(core)
        tokens.extend(trail)
    return tokens


_WORD = re.compile(r"\w", re.UNICODE)


def feature_tokens(text: str) -> list[str]:
    """Lowercased word tokens used for vector features; punctuation dropped."""
    return [t.lower() for t in tokenize(text) if _WORD.search(t)]

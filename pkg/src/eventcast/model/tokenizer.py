"""Vocabulary-free tokenizer: lowercase word/number/punctuation pieces hashed to ids.

Long words are split into wordpiece-style fragments (``##`` continuation).
Id 0 is padding.
"""

from __future__ import annotations

import re
import zlib
from typing import Sequence

import numpy as np

from ..errors import InputError

PAD_ID = 0
_PIECES = re.compile(r"[a-z]+|\d+(?:\.\d+)?|[^\sa-z\d]")
MAX_WORD = 10
FRAGMENT = 6


def pieces(text: str) -> list[str]:
    out = []
    for tok in _PIECES.findall(text.lower()):
        if tok.isalpha() and len(tok) > MAX_WORD:
            out.append(tok[:FRAGMENT])
            out += ["##" + tok[i:i + FRAGMENT] for i in range(FRAGMENT, len(tok), FRAGMENT)]
        else:
            out.append(tok)
    return out


def token_ids(text: str, vocab_size: int, max_len: int) -> list[int]:
    ids = [1 + zlib.crc32(p.encode("utf-8")) % (vocab_size - 1) for p in pieces(text)]
    return ids[:max_len]


def encode_batch(texts: Sequence[str], vocab_size: int, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Padded ``(ids, mask)`` arrays, each shaped (len(texts), longest)."""
    rows = [token_ids(t, vocab_size, max_len) for t in texts]
    for t, r in zip(texts, rows):
        if not r:
            raise InputError(f"text has no tokens: {t[:40]!r}")
    width = max(len(r) for r in rows)
    ids = np.full((len(rows), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, r in enumerate(rows):
        ids[i, :len(r)] = r
        mask[i, :len(r)] = True
    return ids, mask

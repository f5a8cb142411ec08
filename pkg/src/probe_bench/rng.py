"""Deterministic random streams.

All stochastic stages (Gaussian control matrices, bootstrap resampling,
feature subsampling, label shuffles) draw from counter-based Philox
generators.  Independent sub-streams are derived by hashing a master seed
together with a stage name and index, so results never depend on the order
in which streams are consumed or on how work is split across processes.
Normal variates come from numpy's ziggurat implementation over Philox,
which produces the same sequence on every platform for a given numpy
version.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Separator for hashing heterogeneous key parts; avoids collisions such as
# ("ab", "c") vs ("a", "bc").
_SEP = b"\x1f"


def subseed(*parts: int | str) -> int:
    """Derive a 64-bit child seed from a tuple of ints and strings.

    The derivation is a SHA-256 hash of the canonical byte encoding of the
    parts, truncated to 8 bytes (big-endian).  It is stable across runs,
    platforms, and Python versions.
    """
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, bool) or not isinstance(part, (int, str)):
            raise TypeError(f"subseed parts must be int or str, got {type(part).__name__}")
        if isinstance(part, int):
            h.update(b"i" + str(part).encode("ascii"))
        else:
            h.update(b"s" + part.encode("utf-8"))
        h.update(_SEP)
    return int.from_bytes(h.digest()[:8], "big")


def generator(seed: int) -> np.random.Generator:
    """Philox-backed generator for the given 64-bit seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def fisher_yates(values: np.ndarray, seed: int) -> np.ndarray:
    """Return a shuffled copy of ``values`` using an explicit Fisher-Yates pass.

    Swap indices are drawn from the Philox stream for ``seed``.  The input
    is never modified; the output is a permutation of it (same multiset).
    """
    out = np.array(values, copy=True)
    n = out.shape[0]
    if n < 2:
        return out
    gen = generator(seed)
    # Draw all swap targets in one call: position i swaps with j in [0, i].
    highs = np.arange(n, 1, -1, dtype=np.int64)  # i+1 for i = n-1 .. 1
    js = gen.integers(low=0, high=highs)
    for k, i in enumerate(range(n - 1, 0, -1)):
        j = js[k]
        out[i], out[j] = out[j], out[i]
    return out

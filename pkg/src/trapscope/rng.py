"""Deterministic counter-based random streams for Monte Carlo sampling.

All stochastic code draws from Philox 4x64 generators keyed by
(seed, stream, chunk).  Sample spaces are split into fixed-size chunks, so
any distribution of whole chunks across workers reproduces the serial
result bit for bit.
"""

import numpy as np

CHUNK = 1_000_000


def philox(seed: int, stream: int = 0, chunk: int = 0) -> np.random.Generator:
    """Generator for one fixed chunk of one logical stream."""
    key = (int(seed) & 0xFFFFFFFFFFFFFFFF) << 64
    key |= (int(stream) & 0xFFFFFFFF) << 32
    key |= int(chunk) & 0xFFFFFFFF
    return np.random.Generator(np.random.Philox(key=key))


def chunk_sizes(n: int):
    """Fixed partition of ``n`` samples into CHUNK-sized pieces."""
    done = 0
    chunk = 0
    while done < n:
        m = min(CHUNK, n - done)
        yield chunk, m
        done += m
        chunk += 1

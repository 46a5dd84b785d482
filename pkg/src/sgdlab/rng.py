"""Counter-based deterministic random streams.

Every random quantity in this package is a pure function of
``(seed, stream, index)``: a Philox generator keyed by ``(seed, stream)``
with the index placed in the upper half of the 256-bit counter, leaving
2**128 blocks of room per index.  Distinct streams isolate independent
uses (the online data sequence, fresh-sample estimates at a checkpoint,
constant probing, risk Monte Carlo) so that adding or re-running one
component never perturbs another.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DATA_STREAM",
    "STABILITY_PURPOSE",
    "MOMENT_PURPOSE",
    "PROBE_PURPOSE",
    "RISK_PURPOSE",
    "substream",
    "philox_generator",
    "CounterStream",
]

_MASK64 = (1 << 64) - 1

# Stream-id layout: purpose tag in the high 32 bits, sub-index below.
DATA_STREAM = 0
STABILITY_PURPOSE = 1
MOMENT_PURPOSE = 2
PROBE_PURPOSE = 3
RISK_PURPOSE = 4


def substream(purpose: int, index: int = 0) -> int:
    """Stream id for an isolated purpose, sub-keyed by e.g. a checkpoint step."""
    if purpose < 0 or index < 0 or index >= (1 << 32):
        raise ValueError(f"bad substream ({purpose}, {index})")
    return ((purpose << 32) | index) & _MASK64


def _key(seed: int, stream: int) -> np.ndarray:
    return np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)


def philox_generator(seed: int, stream: int = 0, index: int = 0) -> np.random.Generator:
    """Fresh generator positioned at (seed, stream, index)."""
    counter = np.zeros(4, dtype=np.uint64)
    counter[2] = index & _MASK64
    return np.random.Generator(np.random.Philox(key=_key(seed, stream), counter=counter))


class CounterStream:
    """Reusable (seed, stream) source of per-index generators.

    ``generator_at(i)`` returns a shared Generator reset to the exact state
    of ``philox_generator(seed, stream, i)`` — bit-identical draws, but
    about 3x cheaper in tight loops because nothing is reallocated.
    Not thread-safe; use one instance per sequential run.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = seed
        self.stream = stream
        self._bg = np.random.Philox(key=_key(seed, stream))
        self._gen = np.random.Generator(self._bg)
        self._state = self._bg.state
        self._counter = self._state["state"]["counter"]
        self._state["buffer_pos"] = 4  # buffer empty: force regeneration
        self._state["has_uint32"] = 0
        self._state["uinteger"] = 0

    def generator_at(self, index: int) -> np.random.Generator:
        c = self._counter
        c[0] = 0
        c[1] = 0
        c[2] = index
        c[3] = 0
        self._bg.state = self._state
        return self._gen

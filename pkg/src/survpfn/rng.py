"""Deterministic counter-based random streams.

Every random draw in the package flows through an :class:`RngStream`,
a stateless handle identified by ``(master_seed, stream_id)``.  Child
streams are derived by mixing the parent id with a key path through
SplitMix64, so any stream is a pure function of the master seed and its
derivation path: re-deriving the same path always yields the same
stream, independent of call order, process, or platform.

Draws come from numpy's Philox counter-based bit generator keyed by the
pair, which guarantees identical sequences across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> int:
    """One SplitMix64 output step for a 64-bit state."""
    z = (state + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _mix(parts: tuple[Union[int, str], ...]) -> int:
    """Fold a tuple of ints/strings into a single 64-bit id."""
    h = 0
    for part in parts:
        if isinstance(part, str):
            for byte in part.encode("utf-8"):
                h = splitmix64(h ^ byte)
            h = splitmix64(h ^ (len(part) & _MASK64))
        else:
            h = splitmix64(h ^ (int(part) & _MASK64))
        h = splitmix64(h)
    return h


@dataclass(frozen=True)
class RngStream:
    """Stateless handle for one counter-based random stream."""

    master_seed: int
    stream_id: int = 0

    def derive(self, *parts: Union[int, str]) -> "RngStream":
        """Child stream keyed by ``parts``; a pure function of the path."""
        if not parts:
            raise ValueError("derive() needs at least one key part")
        return RngStream(self.master_seed, _mix((self.stream_id, *parts)))

    def generator(self) -> np.random.Generator:
        """Fresh numpy Generator positioned at the start of this stream.

        Each call returns a new generator at counter zero, so draws are
        reproducible regardless of how often the stream was used before.
        """
        key = (self.master_seed & _MASK64) | ((self.stream_id & _MASK64) << 64)
        return np.random.Generator(np.random.Philox(key=key))

"""Seed derivation: per-session seeds from a master seed, and labelled per-party
random streams from a session seed."""

from __future__ import annotations

import zlib
from collections.abc import Mapping

import numpy as np

_MASK64 = (1 << 64) - 1


def session_seed(master_seed: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=master_seed & _MASK64, spawn_key=(index,))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def _label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


class Streams:
    """Factory of independent generators keyed by a string label.

    ``salts`` perturbs individual labels while leaving every other stream
    untouched, which lets tests vary one party's randomness in isolation.
    """

    def __init__(self, seed: int, salts: Mapping[str, int] | None = None) -> None:
        self.seed = int(seed) & _MASK64
        self.salts = dict(salts or {})
        self._cache: dict[str, np.random.Generator] = {}

    def get(self, label: str) -> np.random.Generator:
        rng = self._cache.get(label)
        if rng is None:
            key = (_label_key(label), self.salts.get(label, 0))
            rng = np.random.default_rng(np.random.SeedSequence(entropy=self.seed, spawn_key=key))
            self._cache[label] = rng
        return rng

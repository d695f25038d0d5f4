"""Named, independent random streams derived from one master seed."""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("env", "bandit", "vae-init", "vae-noise", "dataset", "eval")


def stream(master_seed: int, name: str, *extra: int) -> np.random.Generator:
    """Generator for ``name`` under ``master_seed``.

    Streams are keyed by a CRC of the name rather than by creation order, so
    adding or skipping one component never shifts another's draws.
    """
    key = [int(master_seed), zlib.crc32(name.encode()), *map(int, extra)]
    return np.random.default_rng(np.random.SeedSequence(key))


class RngStreams:
    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)

    def __call__(self, name: str, *extra: int) -> np.random.Generator:
        return stream(self.master_seed, name, *extra)

    def seed_int(self, name: str, *extra: int) -> int:
        """A plain integer seed for APIs that take one (e.g. fixed scoring noise)."""
        return int(self(name, *extra).integers(2**31 - 1))

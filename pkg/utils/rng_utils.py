# utils/rng_utils.py
import logging
from typing import Dict

import numpy as np

from config import PURPOSE_TAGS

logger = logging.getLogger(__name__)


class RngStream:
    """
    A named numpy Generator derived from (master seed, replica id, purpose).

    Two streams with the same triple replay identical sequences; distinct triples
    get independent PCG64 states through SeedSequence spawn keys.
    """

    def __init__(self, seed: int, replica_id: int, purpose: str):
        if purpose not in PURPOSE_TAGS:
            raise ValueError(f"unknown purpose tag: {purpose!r}")
        self.seed = int(seed)
        self.replica_id = int(replica_id)
        self.purpose = purpose
        self.seed_sequence = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(self.replica_id, PURPOSE_TAGS[purpose])
        )
        self.generator = np.random.default_rng(self.seed_sequence)

    @property
    def stream_id(self) -> int:
        """64-bit identifier of the (replica, purpose) pair."""
        return int(self.seed_sequence.generate_state(1, dtype=np.uint64)[0])

    def random(self, size=None):
        return self.generator.random(size)

    def exponential(self, scale=1.0, size=None):
        return self.generator.exponential(scale, size)

    def poisson(self, lam: float) -> int:
        return int(self.generator.poisson(lam)) if lam > 0 else 0

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def choice_cdf(self, cdf: np.ndarray) -> int:
        """Index drawn by inversion of a cumulative distribution (last entry = total mass)."""
        idx = int(np.searchsorted(cdf, self.generator.random() * cdf[-1], side="right"))
        return min(idx, cdf.shape[0] - 1)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, replica={self.replica_id}, purpose={self.purpose})"


def seed_derive(master_seed: int, replica_id: int, purpose: str) -> RngStream:
    return RngStream(master_seed, replica_id, purpose)


class ReplicaStreams:
    """All streams of one replica; each purpose is derived once and then reused."""

    def __init__(self, master_seed: int, replica_id: int):
        self.master_seed = int(master_seed)
        self.replica_id = int(replica_id)
        self._streams: Dict[str, RngStream] = {}

    def __getitem__(self, purpose: str) -> RngStream:
        stream = self._streams.get(purpose)
        if stream is None:
            stream = seed_derive(self.master_seed, self.replica_id, purpose)
            self._streams[purpose] = stream
        return stream

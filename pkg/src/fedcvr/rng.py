"""Named, splittable random streams.

Every source of randomness in an experiment is a separately keyed Philox
(counter-based) generator derived from the root seed and a tuple of string
labels via SHA-256. Streams are therefore independent of each other and of
scheduling: consuming the policy stream can never perturb data generation,
and per-(round, client) training streams make client order irrelevant.
"""
from __future__ import annotations

import hashlib

import numpy as np


def seed_entropy(root_seed: int, *labels) -> list[int]:
    """Derive stable 256-bit entropy from a root seed and stream labels."""
    tag = "/".join(str(part) for part in (root_seed, *labels))
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 32, 8)]


def stream(root_seed: int, *labels) -> np.random.Generator:
    """A fresh counter-based generator for the named stream."""
    entropy = seed_entropy(root_seed, *labels)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


class ExperimentStreams:
    """The per-run stream bundle used by the round loop.

    `policy` is consumed sequentially by the single-writer loop; training
    streams are keyed by (round, client) so results do not depend on the
    order clients are processed in.
    """

    def __init__(self, root_seed: int):
        self.root_seed = int(root_seed)
        self.policy = stream(self.root_seed, "policy")

    def train(self, round_t: int, client_id: int) -> np.random.Generator:
        return stream(self.root_seed, "train", round_t, client_id)

    def data_seed(self) -> int:
        return seed_entropy(self.root_seed, "data")[0]

    def init(self) -> np.random.Generator:
        return stream(self.root_seed, "init")

    def tracked(self) -> np.random.Generator:
        return stream(self.root_seed, "tracked")

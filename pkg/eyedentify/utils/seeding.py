from contextlib import contextmanager
from typing import Sequence

import numpy as np
import torch
from decouple import config


def default_seed() -> int:
    """Seed used when neither the config file nor the command line sets one."""
    return config("EYID_SEED", default=0, cast=int)


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent numpy generator for the rng substream identified by `key`."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))


def torch_generator(seed: int, *key: int) -> torch.Generator:
    # derive a 63-bit torch seed from the same substream scheme
    derived = int(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)).generate_state(1, np.uint64)[0])
    return torch.Generator().manual_seed(derived & ((1 << 63) - 1))


def seed_key(seed: int, key: Sequence[int]) -> list:
    return [int(seed), *[int(k) for k in key]]


@contextmanager
def deterministic_torch():
    """Deterministic torch kernels inside the block; the caller's setting is restored on exit."""
    enabled = torch.are_deterministic_algorithms_enabled()
    warn_only = torch.is_deterministic_algorithms_warn_only_enabled()
    torch.use_deterministic_algorithms(True, warn_only=True)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(enabled, warn_only=warn_only)

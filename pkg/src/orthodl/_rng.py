"""Seed plumbing: every random stream is a child of an integer master seed."""

import numpy as np

_MAX_SEED = 2**64


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed < _MAX_SEED:
        raise ValueError(f"seed must be an integer in [0, 2**64), got {seed}")
    return seed


def seed_sequence(seed, *keys) -> np.random.SeedSequence:
    """SeedSequence for the stream addressed by ``(seed, *keys)``."""
    keys = tuple(int(k) for k in keys)
    return np.random.SeedSequence(check_seed(seed), spawn_key=keys)


def child_rng(seed, *keys) -> np.random.Generator:
    """PCG64 generator for the stream addressed by ``(seed, *keys)``.

    Distinct key tuples give statistically independent streams, and the
    mapping is a pure function of its arguments, so work can be split
    across processes in any order.
    """
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))


def child_seed(seed, *keys) -> int:
    """Derive a 64-bit integer seed, e.g. to hand to a sub-experiment."""
    return int(seed_sequence(seed, *keys).generate_state(1, np.uint64)[0])

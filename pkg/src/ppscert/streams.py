"""Seeded chunk streams.

Every sampling job is cut into fixed-size chunks; chunk ``i`` of stream ``s``
draws from ``SeedSequence(seed, spawn_key=(s, i))``. Chunk boundaries never
depend on the worker count and partial results are merged in chunk order, so
any number of workers gives bit-identical output.
"""
from __future__ import annotations

from collections.abc import Callable, Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar

import numpy as np

CHUNK_SIZE = 1 << 16

# stream ids keep unrelated draws apart under one user seed
STREAM_MAIN = 0
STREAM_PROPOSAL = 1
STREAM_PILOT = 2
STREAM_MASS = 3
STREAM_REPLICATION = 4

T = TypeVar("T")


def generator(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def chunk_sizes(n: int, chunk: int = CHUNK_SIZE) -> list[int]:
    full, rest = divmod(int(n), chunk)
    return [chunk] * full + ([rest] if rest else [])


def chunks(seed: int, n: int, stream: int = STREAM_MAIN, chunk: int = CHUNK_SIZE) -> Iterator[tuple[int, int, np.random.Generator]]:
    """Yield ``(index, size, generator)`` covering ``n`` draws."""
    for i, size in enumerate(chunk_sizes(n, chunk)):
        yield i, size, generator(seed, stream, i)


def map_chunks(
    fn: Callable[[int, int, np.random.Generator], T],
    seed: int,
    n: int,
    stream: int = STREAM_MAIN,
    workers: int = 1,
    chunk: int = CHUNK_SIZE,
) -> list[T]:
    """Apply ``fn(index, size, rng)`` to every chunk; results come back in chunk order."""
    jobs = list(chunks(seed, n, stream, chunk))
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


def replication_seeds(seed: int, count: int) -> list[int]:
    """Independent 63-bit seeds for replication experiments."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAM_REPLICATION,))
    return [int(s) for s in ss.generate_state(count, dtype=np.uint64) >> np.uint64(1)]



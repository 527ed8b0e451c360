"""Counter-based random streams.

Every draw in the package is a pure function of (seed, tag, counter...), so
results do not depend on execution order, chunking or thread count.
"""

import numpy as np

VALUES = 1
BIDS = 2
ACTIONS = 3
SCRIPTS = 4
INSTANCES = 5
RESTARTS = 6
RUNS = 7

BLOCK_ROWS = 4096


def stream(seed: int, *counters: int) -> np.random.Generator:
    """Philox generator keyed by the seed and an arbitrary counter path."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *counters])))


def uniform_rows(seed: int, tag: int, start: int, count: int, width: int) -> np.ndarray:
    """Rows start..start+count-1 of an unbounded U[0,1) matrix with `width` columns.

    Row j is produced by the block stream (seed, tag, j // BLOCK_ROWS).
    """
    if count <= 0:
        return np.empty((0, width))
    first = start // BLOCK_ROWS
    last = (start + count - 1) // BLOCK_ROWS
    blocks = [stream(seed, tag, b).random((BLOCK_ROWS, width)) for b in range(first, last + 1)]
    rows = np.concatenate(blocks, axis=0)
    offset = start - first * BLOCK_ROWS
    return rows[offset:offset + count]


def child_seed(seed: int, index: int) -> int:
    """Seed of the index-th independent run of an experiment."""
    return int(np.random.SeedSequence([seed, RUNS, index]).generate_state(1, dtype=np.uint64)[0])

"""
Counter-based random substreams.

Paths are grouped into fixed-size blocks; block ``b`` of root seed ``s`` always draws
from ``Philox`` keyed by ``SeedSequence(s, spawn_key=(b,))``. The numbers a path sees
therefore depend on ``(seed, block_size, path_index)`` only, never on how blocks are
scheduled across workers.
"""
import hashlib
import logging
from typing import Callable, List, Sequence, Tuple, TypeVar

import numpy as np
from joblib import Parallel, delayed

from config import BLOCK_SIZE
from utils.errors import RejectedInputError

logger = logging.getLogger(__name__)

T = TypeVar("T")

# spawn_key entries below 2**32 are block indices; named streams live above
_LABEL_OFFSET = 2**32


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise RejectedInputError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def label_key(label: str) -> int:
    """Stable integer key for a named stream"""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return _LABEL_OFFSET + int.from_bytes(digest[:4], "little")


def substream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(_check_seed(seed), spawn_key=tuple(keys))))


def named_stream(seed: int, label: str) -> np.random.Generator:
    return substream(seed, label_key(label))


def sub_seed(seed: int, label: str) -> int:
    """Derived 64-bit seed for a named purpose (recorded in run summaries)"""
    state = np.random.SeedSequence(_check_seed(seed), spawn_key=(label_key(label),)).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def block_ranges(k: int, block_size: int = BLOCK_SIZE) -> List[Tuple[int, int, int]]:
    if k < 1:
        raise RejectedInputError(f"sample count must be at least 1, got {k}")
    if block_size < 1:
        raise RejectedInputError(f"block size must be at least 1, got {block_size}")
    return [(b, start, min(start + block_size, k)) for b, start in enumerate(range(0, k, block_size))]


def run_blocks(fn: Callable[[int, int, int, np.random.Generator], T], k: int, seed: int,
               workers: int = 1, block_size: int = BLOCK_SIZE) -> List[T]:
    """Evaluate ``fn(block_index, start, stop, rng)`` for every block, returned in block order"""
    blocks = block_ranges(k, block_size)
    if workers <= 1 or len(blocks) == 1:
        return [fn(b, start, stop, substream(seed, b)) for b, start, stop in blocks]
    logger.debug("dispatching %d blocks over %d workers", len(blocks), workers)
    return Parallel(n_jobs=workers, prefer="threads")(
        delayed(fn)(b, start, stop, substream(seed, b)) for b, start, stop in blocks
    )


def concat_blocks(parts: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate(list(parts), axis=0)

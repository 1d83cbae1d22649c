import sys
import os
import numpy as np
import pytest
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from utils.errors import RejectedInputError
from utils.rng import block_ranges, concat_blocks, label_key, named_stream, run_blocks, sub_seed, substream


def _draw(b, start, stop, rng):
    return rng.standard_normal(stop - start)


def test_label_key_is_stable_and_above_block_indices():
    """Named streams never collide with block substreams"""
    assert label_key("bootstrap") == label_key("bootstrap")
    assert label_key("bootstrap") != label_key("ou_matrices")
    assert label_key("bootstrap") >= 2**32


def test_named_stream_reproducible():
    a = named_stream(7, "bootstrap").standard_normal(5)
    b = named_stream(7, "bootstrap").standard_normal(5)
    c = named_stream(8, "bootstrap").standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_substreams_differ_per_block():
    assert not np.array_equal(substream(1, 0).standard_normal(4), substream(1, 1).standard_normal(4))


def test_sub_seed_is_64_bit_and_label_dependent():
    s = sub_seed(42, "path_kl")
    assert 0 <= s < 2**64
    assert s == sub_seed(42, "path_kl")
    assert s != sub_seed(42, "hitting_u")


def test_block_ranges_cover_all_paths():
    blocks = block_ranges(10, block_size=4)
    assert blocks == [(0, 0, 4), (1, 4, 8), (2, 8, 10)]


def test_block_ranges_rejects_empty():
    with pytest.raises(RejectedInputError):
        block_ranges(0)


def test_results_independent_of_worker_count():
    """Worker count only schedules blocks; the numbers stay put"""
    serial = concat_blocks(run_blocks(_draw, 1000, seed=3, workers=1, block_size=128))
    threaded = concat_blocks(run_blocks(_draw, 1000, seed=3, workers=4, block_size=128))
    assert serial.shape == (1000,)
    assert np.array_equal(serial, threaded)


def test_block_size_changes_the_draws():
    a = concat_blocks(run_blocks(_draw, 300, seed=3, block_size=100))
    b = concat_blocks(run_blocks(_draw, 300, seed=3, block_size=150))
    assert np.array_equal(a[:100], b[:100])
    assert not np.array_equal(a[100:150], b[100:150])


def test_negative_seed_rejected():
    with pytest.raises(RejectedInputError):
        substream(-1, 0)

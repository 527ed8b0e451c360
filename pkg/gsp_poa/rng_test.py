import numpy as np
import pytest

from . import rng


def test_rows_do_not_depend_on_chunking():
    whole = rng.uniform_rows(11, rng.ACTIONS, 0, 10_000, 3)
    pieces = np.concatenate([rng.uniform_rows(11, rng.ACTIONS, lo, 777, 3) for lo in range(0, 10_000, 777)])
    assert np.array_equal(whole, pieces[:10_000])
    assert np.array_equal(rng.uniform_rows(11, rng.ACTIONS, 4095, 2, 3), whole[4095:4097])


def test_tags_and_seeds_give_distinct_streams():
    a = rng.uniform_rows(1, rng.VALUES, 0, 5, 2)
    assert not np.array_equal(a, rng.uniform_rows(1, rng.BIDS, 0, 5, 2))
    assert not np.array_equal(a, rng.uniform_rows(2, rng.VALUES, 0, 5, 2))
    assert rng.uniform_rows(1, rng.VALUES, 0, 0, 2).shape == (0, 2)


def test_child_seeds():
    assert rng.child_seed(3, 0) == rng.child_seed(3, 0)
    assert len({rng.child_seed(3, i) for i in range(100)}) == 100
    assert 0 <= rng.child_seed(2**64 - 1, 5) < 2**64


def test_negative_seed():
    with pytest.raises(ValueError):
        rng.stream(-1)

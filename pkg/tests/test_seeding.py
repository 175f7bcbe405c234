import numpy as np

from penn.seeding import child_seed, stream


def test_same_path_same_stream():
    assert np.array_equal(stream(3, "a", 1).random(5), stream(3, "a", 1).random(5))


def test_distinct_paths_differ():
    draws = {tuple(stream(3, *p).random(3)) for p in [("a",), ("b",), ("a", 1), ()]}
    assert len(draws) == 4
    assert not np.array_equal(stream(3, "a").random(3), stream(4, "a").random(3))


def test_child_seed_stable():
    assert child_seed(0, "x") == child_seed(0, "x")
    assert child_seed(0, "x") != child_seed(0, "y")
    assert 0 <= child_seed(123, "z", 4) < 2**32

import numpy as np
import pytest

from kolmo.parallel import ENV_WORKERS, batch_rng, batch_sizes, ordered_concat, resolve_workers, run_batches


def test_resolve_workers(monkeypatch):
    monkeypatch.setenv(ENV_WORKERS, "3")
    assert resolve_workers() == 3
    assert resolve_workers(5) == 5
    monkeypatch.delenv(ENV_WORKERS)
    assert resolve_workers() >= 1
    assert resolve_workers(0) == 1


def test_batch_sizes():
    assert batch_sizes(10, 4) == [4, 4, 2]
    assert batch_sizes(8, 4) == [4, 4]
    with pytest.raises(ValueError):
        batch_sizes(0, 4)


def test_streams_are_keyed():
    a = batch_rng(1, 2, 3).random(4)
    np.testing.assert_array_equal(a, batch_rng(1, 2, 3).random(4))
    assert not np.array_equal(a, batch_rng(1, 2, 4).random(4))
    assert not np.array_equal(a, batch_rng(2, 2, 3).random(4))


def test_run_batches_is_ordered():
    tasks = list(range(20))
    func = lambda i: batch_rng(0, i).random(3)
    one = ordered_concat(run_batches(func, tasks, 1))
    many = ordered_concat(run_batches(func, tasks, 4))
    np.testing.assert_array_equal(one, many)
    assert ordered_concat([]).size == 0

import numpy as np
import pytest

from streetgan.rng import Rng


def test_same_seed_same_stream():
    a = Rng(7).uniform(size=(4,))
    b = Rng(7).uniform(size=(4,))
    assert np.array_equal(a, b)


def test_long_stream_equality():
    # two generators with equal seeds agree on the first 1e6 draws
    a = Rng(123)._raw(1_000_000)
    b = Rng(123)._raw(1_000_000)
    assert np.array_equal(a, b)


def test_different_seeds_differ():
    assert not np.array_equal(Rng(1)._raw(64), Rng(2)._raw(64))


def test_children_are_independent_streams():
    root = Rng(42)
    c1 = root.child(0)._raw(256)
    c2 = root.child(1)._raw(256)
    parent = root._raw(256)
    assert not np.array_equal(c1, c2)
    assert not np.array_equal(c1, parent)
    # same tag, same stream
    assert np.array_equal(Rng(42).child("gan")._raw(16), Rng(42).child("gan")._raw(16))


def test_child_derivation_does_not_consume_parent():
    a = Rng(9)
    a.child("x")
    b = Rng(9)
    assert np.array_equal(a._raw(8), b._raw(8))


def test_uniform_range_and_moments():
    u = Rng(3).uniform(-1.0, 1.0, size=(100_000,))
    assert u.min() >= -1.0 and u.max() < 1.0
    assert abs(u.mean()) < 0.02
    assert abs(u.var() - 1.0 / 3.0) < 0.01


def test_normal_moments():
    z = Rng(3).normal(0.0, 1.0, size=(100_000,))
    assert abs(z.mean()) < 0.02
    assert abs(z.std() - 1.0) < 0.02


def test_permutation_is_a_permutation():
    p = Rng(5).permutation(1000)
    assert sorted(p.tolist()) == list(range(1000))
    assert np.array_equal(p, Rng(5).permutation(1000))


def test_integers_bounds():
    v = Rng(11).integers(3, 9, size=(5000,))
    assert v.min() >= 3 and v.max() <= 8
    assert set(np.unique(v)) == set(range(3, 9))


def test_choice_without_replacement_unique():
    idx = Rng(2).choice(50, 20, replace=False)
    assert len(set(idx.tolist())) == 20


def test_bad_args():
    with pytest.raises(ValueError):
        Rng(1).uniform(2.0, 1.0, size=(3,))
    with pytest.raises(ValueError):
        Rng(1).normal(0.0, -1.0, size=(3,))
    with pytest.raises(ValueError):
        Rng(1).choice(5, 6, replace=False)

"""Tests for named RNG substreams."""

import numpy as np

from omlcae import rng as rngmod


def test_substream_deterministic():
    a = rngmod.substream(0, "pilots", 5.0, 1, 3).normal(size=8)
    b = rngmod.substream(0, "pilots", 5.0, 1, 3).normal(size=8)
    assert np.array_equal(a, b)


def test_substream_distinct_labels_differ():
    a = rngmod.substream(0, "pilots", 1).normal(size=8)
    b = rngmod.substream(0, "pilots", 2).normal(size=8)
    c = rngmod.substream(0, "eval", 1).normal(size=8)
    d = rngmod.substream(1, "pilots", 1).normal(size=8)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_substream_mixed_label_types():
    a = rngmod.substream(0, "x", 1).normal()
    b = rngmod.substream(0, "x", "1").normal()
    # int and its string form hash to the same label (str() canonicalization)
    assert a == b

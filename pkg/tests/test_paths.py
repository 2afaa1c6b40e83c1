"""Counter-based Brownian increments: determinism, refinement, statistics."""

import math

import numpy as np
import pytest

from dosde import paths
from dosde.errors import OverflowingDims


def test_shapes_and_dtype():
    p = paths.generate(1, 10, 0.25, 8, 3)
    assert p.increments.shape == (10, 8, 3)
    assert p.increments.dtype == np.float64
    assert p.n_steps == 10 and p.N == 8 and p.m == 3 and p.dt == 0.25


def test_same_key_same_bytes():
    a = paths.generate(42, 16, 0.5, 32, 2)
    b = paths.generate(42, 16, 0.5, 32, 2)
    assert np.array_equal(a.increments, b.increments)


def test_different_seeds_differ():
    a = paths.generate(1, 4, 0.1, 16, 1)
    b = paths.generate(2, 4, 0.1, 16, 1)
    assert not np.array_equal(a.increments, b.increments)


def test_steps_are_independent_counters():
    # Also holds for non-contiguous requests: the first 4 steps of a
    # longer path coincide with a shorter one.
    long = paths.generate(9, 12, 0.1, 8, 2)
    short = paths.generate(9, 4, 0.1, 8, 2)
    assert np.array_equal(long.increments[:4], short.increments)


def test_dyadic_refinement_is_consistent():
    # Coarse increments equal the pairwise sums of the next-finer level,
    # bit for bit, so a dt-halving study reuses one notional path.
    coarse = paths.generate(7, 8, 0.2, 16, 2, level=1)
    fine = paths.generate(7, 16, 0.1, 16, 2, level=0)
    summed = fine.increments[0::2] + fine.increments[1::2]
    assert np.array_equal(coarse.increments, summed)


def test_two_level_refinement():
    top = paths.generate(7, 4, 0.4, 8, 1, level=2)
    mid = paths.generate(7, 8, 0.2, 8, 1, level=1)
    assert np.array_equal(top.increments, mid.increments[0::2] + mid.increments[1::2])


def test_variance_scales_with_dt():
    p = paths.generate(3, 200, 0.01, 512, 2)
    z = p.increments / math.sqrt(0.01)
    assert abs(float(z.mean())) < 0.01
    assert abs(float(z.var()) - 1.0) < 0.01
    # extreme quantiles present but sane for a Gaussian sample
    assert 4.0 < float(np.abs(z).max()) < 8.0


def test_budget_guard():
    with pytest.raises(OverflowingDims):
        paths.generate(0, 1 << 20, 1e-3, 1 << 10, 1 << 10)


def test_rejects_bad_arguments():
    with pytest.raises(Exception):
        paths.generate(0, -1, 1e-3, 4, 1)
    with pytest.raises(Exception):
        paths.generate(0, 4, 0.0, 4, 1)


def test_dump_roundtrip(tmp_path):
    p = paths.generate(5, 6, 0.125, 4, 2)
    out = tmp_path / "w.bin"
    p.dump(out)
    back = np.fromfile(out, dtype="<f8").reshape(6, 4, 2)
    assert np.array_equal(back, p.increments)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from tamedsde.rng import (
    AlignmentError,
    BrownianGrid,
    Partition,
    SeedSpec,
    coarsen,
    coarsen_to,
    derive_stream,
    increment_on,
    sample_brownian,
    sample_brownian_batch,
)


def test_stream_is_pure_function_of_seed():
    a = derive_stream(SeedSpec(42, 0, "bm")).standard_normal(8)
    b = derive_stream(SeedSpec(42, 0, "bm")).standard_normal(8)
    assert np.array_equal(a, b)


def test_neighbouring_paths_uncorrelated():
    a = derive_stream(SeedSpec(42, 0, "bm")).standard_normal(10_000)
    b = derive_stream(SeedSpec(42, 1, "bm")).standard_normal(10_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.03


def test_tags_give_independent_streams():
    a = derive_stream(SeedSpec(42, 0, "bm")).standard_normal(10_000)
    b = derive_stream(SeedSpec(42, 0, "init")).standard_normal(10_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.03


def test_master_seed_changes_first_draw():
    a = derive_stream(SeedSpec(42, 0, "bm")).standard_normal()
    b = derive_stream(SeedSpec(43, 0, "bm")).standard_normal()
    assert a != b


def test_seedspec_validation():
    with pytest.raises(ValueError):
        SeedSpec(-1)
    with pytest.raises(ValueError):
        SeedSpec(2**64)
    with pytest.raises(ValueError):
        SeedSpec(1, -1)


def test_unit_increment_variance_over_many_seeds():
    draws = np.array([sample_brownian(SeedSpec(7, i), 1, 0, 1.0).increments[0, 0] for i in range(100_000)])
    assert 0.97 <= draws.var() <= 1.03


def test_shape_contract():
    g = sample_brownian(SeedSpec(1), 3, 4, 2.0)
    assert g.increments.shape == (16, 3)
    assert g.dims == 3 and g.n_steps == 16 and g.dt == pytest.approx(0.125)


def test_same_seed_same_grid():
    a = sample_brownian(SeedSpec(5, 3), 2, 6, 1.0)
    b = sample_brownian(SeedSpec(5, 3), 2, 6, 1.0)
    assert a.checksum() == b.checksum()


def test_batch_rows_match_single_paths():
    batch = sample_brownian_batch(9, [3, 4, 5], 2, 5, 1.0)
    for k, i in enumerate([3, 4, 5]):
        single = sample_brownian(SeedSpec(9, i), 2, 5, 1.0)
        assert np.array_equal(batch.increments[k], single.increments)


def test_sample_rejects_bad_arguments():
    with pytest.raises(OverflowError):
        sample_brownian(SeedSpec(1), 1, 41, 1.0)
    with pytest.raises(ValueError):
        sample_brownian(SeedSpec(1), 0, 2, 1.0)
    with pytest.raises(ValueError):
        sample_brownian(SeedSpec(1), 1, 2, 0.0)
    with pytest.raises(ValueError):
        sample_brownian(SeedSpec(1), 1, -1, 1.0)


def test_coarsen_definition():
    g = BrownianGrid(np.array([[0.25], [-1.5]]), 1, 1.0)
    c = coarsen(g, 2)
    assert c.level == 0
    assert c.increments[0, 0] == 0.25 + -1.5


def test_coarsen_identity():
    g = sample_brownian(SeedSpec(3), 2, 5, 1.0)
    assert np.array_equal(coarsen(g, 1).increments, g.increments)


def test_coarsen_associative():
    g = sample_brownian(SeedSpec(3), 2, 8, 1.0)
    twice = coarsen(coarsen(g, 2), 2).increments
    once = coarsen(g, 4).increments
    np.testing.assert_allclose(twice, once, rtol=0, atol=1e-12)


def test_coarsen_pairs_fine_increments():
    g = sample_brownian(SeedSpec(3), 1, 6, 1.0)
    c = coarsen(g, 2)
    np.testing.assert_allclose(c.increments, g.increments[0::2] + g.increments[1::2], rtol=1e-12)


def test_coarsen_rejects_bad_factor():
    g = sample_brownian(SeedSpec(3), 1, 3, 1.0)
    with pytest.raises(ValueError):
        coarsen(g, 3)
    with pytest.raises(ValueError):
        coarsen(g, 16)


def test_coarsen_keeps_provenance():
    g = sample_brownian(SeedSpec(3), 1, 6, 1.0)
    c = coarsen_to(g, 2)
    assert c.seeds == g.seeds and c.source_level == 6


def test_partition_invariants():
    p = Partition(np.array([0.0, 0.1, 0.5, 1.0]))
    assert p.mesh == pytest.approx(0.5)
    assert p.n == 3 and p.horizon == 1.0
    with pytest.raises(ValueError):
        Partition(np.array([0.0, 0.5, 0.5]))
    with pytest.raises(ValueError):
        Partition(np.array([0.1, 0.5]))
    with pytest.raises(ValueError):
        Partition(np.array([0.0]))


def test_increment_on_matching_partition_is_identity():
    g = sample_brownian(SeedSpec(4), 2, 5, 1.0)
    assert np.array_equal(increment_on(g, g.partition()), g.increments)


def test_increment_on_two_steps():
    g = sample_brownian(SeedSpec(4), 1, 3, 1.0)
    inc = increment_on(g, Partition.uniform(1.0, 2))
    np.testing.assert_allclose(inc[:, 0], [g.increments[:4, 0].sum(), g.increments[4:, 0].sum()], rtol=1e-12)


def test_increment_on_telescopes():
    g = sample_brownian(SeedSpec(4), 3, 10, 1.0)
    p = Partition(np.array([0.0, 3 / 1024, 0.25, 0.5 + 7 / 1024, 1.0]))
    inc = increment_on(g, p)
    np.testing.assert_allclose(inc.sum(axis=0), g.path_values()[-1], atol=1e-12)


def test_increment_on_rejects_off_lattice():
    g = sample_brownian(SeedSpec(4), 1, 3, 1.0)
    with pytest.raises(AlignmentError):
        increment_on(g, Partition(np.array([0.0, 0.3, 1.0])))
    with pytest.raises(AlignmentError):
        increment_on(g, Partition.uniform(2.0, 2))


@settings(max_examples=40, deadline=None)
@given(level=st.integers(2, 8), shift=st.integers(0, 2), coarse=st.integers(0, 2), seed=st.integers(0, 2**32))
def test_refinement_consistency(level, shift, coarse, seed):
    shift = min(shift, level)
    g = sample_brownian(SeedSpec(seed), 2, level, 1.0)
    p = Partition.uniform(1.0, 2 ** max(level - shift - coarse, 0))
    a = increment_on(coarsen(g, 2**shift), p)
    b = increment_on(g, p)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_increments_gaussian_ks():
    g = sample_brownian_batch(11, range(10), 1, 10, 3.0)
    z = g.increments.ravel() / np.sqrt(g.dt)
    assert stats.kstest(z, "norm").pvalue > 0.01


def test_grid_is_immutable():
    g = sample_brownian(SeedSpec(1), 1, 2, 1.0)
    with pytest.raises(ValueError):
        g.increments[0, 0] = 1.0

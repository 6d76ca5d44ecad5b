import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import sandpile_lab as sl
from sandpile_lab import rng
from sandpile_lab.kernels import _draw_bit


def test_layout_partition_forced():
    lay = sl.BlockLayout(a=4, K=16, n=2)
    st1 = sl.create_stacks((0, 20), lay, seed=7)
    assert st1.has_stream(2, sl.SINGLE)
    assert not st1.has_stream(2, sl.LEFT)
    assert st1.has_stream(10, sl.LEFT) and st1.has_stream(10, sl.RIGHT)
    assert not st1.has_stream(10, sl.SINGLE)
    with pytest.raises(sl.LayoutError):
        st1.draw(2, sl.LEFT)
    with pytest.raises(sl.LayoutError):
        st1.draw(10, sl.SINGLE)


def test_same_seed_identical_streams():
    lay = sl.BlockLayout(a=4, K=16, n=2)
    a = sl.create_stacks((0, 20), lay, seed=99)
    b = sl.create_stacks((0, 20), lay, seed=99)
    for site, orient in [(0, sl.SINGLE), (3, sl.SINGLE), (7, sl.LEFT), (12, sl.RIGHT)]:
        assert [a.draw(site, orient) for _ in range(64)] == [
            b.draw(site, orient) for _ in range(64)
        ]


def test_draws_advance_by_one_and_replay():
    stacks = sl.StackSet(0, 8, 5)
    first = stacks.draw(3)
    second = stacks.draw(3)
    assert stacks.consumed_at(3) == 2
    assert stacks.instruction(3, 0, 0) == first
    assert stacks.instruction(3, 0, 1) == second
    np.testing.assert_array_equal(
        stacks.instructions(3, 0, 2), np.array([first, second], dtype=np.int8)
    )


def test_values_are_directions():
    stacks = sl.StackSet(0, 4, 123)
    assert set(int(stacks.draw(1)) for _ in range(200)) == {-1, 1}


def test_empirical_mean_small():
    # 1e5 draws: |mean| <= 0.02 (three-sigma binomial bound is ~0.0095)
    stacks = sl.StackSet(0, 2, 2024)
    vals = stacks.instructions(0, 0, 10**5).astype(np.float64)
    assert abs(vals.mean()) <= 0.02


def test_plus_fraction_and_lag1_autocorrelation():
    stacks = sl.StackSet(0, 2, 77)
    v = stacks.instructions(0, 0, 10**6).astype(np.float64)
    frac = (v > 0).mean()
    assert 0.4985 <= frac <= 0.5015
    x = v - v.mean()
    ac1 = float((x[:-1] * x[1:]).mean() / (x * x).mean())
    assert abs(ac1) <= 0.005


def test_cross_implementation_agreement():
    key = rng.stream_key(11, rng.DOMAIN_INSTRUCTIONS, -37, sl.LEFT)
    py = [rng.stream_bit(key, j) for j in range(100)]
    vec = rng.stream_bits_np(key, 0, 100).tolist()
    kern = [int(_draw_bit(np.uint64(key), j)) for j in range(100)]
    assert py == vec == kern


def test_extend_preserves_consumption():
    stacks = sl.StackSet(0, 10, 4)
    seq = [stacks.draw(5) for _ in range(7)]
    stacks.extend(-10, 20)
    assert stacks.consumed_at(5) == 7
    assert [stacks.instruction(5, 0, j) for j in range(7)] == seq
    stacks.draw(-8)  # new sites usable


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**63), site=st.integers(-(2**40), 2**40), j=st.integers(0, 2**30))
def test_instruction_is_pure_function(seed, site, j):
    k1 = rng.stream_key(seed, rng.DOMAIN_INSTRUCTIONS, site, 0)
    k2 = rng.stream_key(seed, rng.DOMAIN_INSTRUCTIONS, site, 0)
    assert k1 == k2
    assert rng.stream_bit(k1, j) == rng.stream_bit(k2, j)
    assert rng.stream_bit(k1, j) in (-1, 1)


def test_distinct_streams_for_orientations():
    key_l = rng.stream_key(9, rng.DOMAIN_INSTRUCTIONS, 5, sl.LEFT)
    key_r = rng.stream_key(9, rng.DOMAIN_INSTRUCTIONS, 5, sl.RIGHT)
    assert key_l != key_r
    a = rng.stream_bits_np(key_l, 0, 2000)
    b = rng.stream_bits_np(key_r, 0, 2000)
    assert (a != b).any()


def test_bad_layout_rejected():
    with pytest.raises(sl.ConfigError):
        sl.BlockLayout(a=4, K=4, n=1)  # width >= period
    with pytest.raises(sl.ConfigError):
        sl.BlockLayout(a=0, K=16, n=1)
    with pytest.raises(sl.LayoutError):
        sl.create_stacks((0, 10), None, 1).draw(11)

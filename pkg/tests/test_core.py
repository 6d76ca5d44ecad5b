import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import sandpile_lab as sl
from sandpile_lab import oracles
from sandpile_lab.core import DensitySpec, activity_proxy, sample_initial


class ScriptedStacks:
    """Duck-typed stream source with pre-scripted draws."""

    def __init__(self, draws):
        self.draws = list(draws)

    def draw(self, site, orientation=0):
        return self.draws.pop(0)


def test_apply_instruction_moves_and_flips():
    st_ = sl.LatticeState.from_counts(0, [0, 2, 0])
    sl.apply_instruction(st_, 1, +1)
    assert list(st_.eta) == [0, 1, 1]
    assert st_.omega_at(1) == 1


def test_boundary_absorbs_and_conserves():
    st_ = sl.LatticeState.from_counts(0, [0, 2, 0])
    sl.apply_instruction(st_, 1, +1)
    assert st_.boundary_frozen == (0, 1)
    assert st_.interior_mass == 1 and st_.total_mass == 2


def test_apply_at_empty_site_is_illegal():
    st_ = sl.LatticeState.from_counts(0, [0, 0, 0, 1, 0])
    with pytest.raises(sl.IllegalMoveError):
        sl.apply_instruction(st_, 1, +1)


def test_legality_predicates():
    st_ = sl.LatticeState.from_counts(0, [0, 1, 1, 2, 0], omega=[0, 1, 0, 0, 0])
    assert sl.is_half_legal(st_, 1)  # one particle, odd parity
    assert not sl.is_half_legal(st_, 2)  # one particle, even parity
    assert sl.is_half_legal(st_, 3) and sl.is_full_legal(st_, 3)
    assert not sl.is_full_legal(st_, 1)
    assert not sl.is_half_legal(st_, 0)  # absorbing endpoint


def test_full_topple_scripted():
    st_ = sl.LatticeState.from_counts(0, [0, 2, 0])
    sl.full_topple(st_, ScriptedStacks([+1, -1]), 1)
    assert list(st_.eta) == [1, 0, 1]
    assert st_.omega_at(1) == 0  # flipped twice
    st2 = sl.LatticeState.from_counts(0, [0, 3, 0])
    sl.full_topple(st2, ScriptedStacks([+1, +1]), 1)
    assert list(st2.eta) == [0, 1, 2]


def test_full_topple_consumes_sequentially():
    st_ = sl.LatticeState.from_counts(-2, [0, 2, 2, 0, 0])
    stacks = sl.StackSet(-2, 3, 8)
    sl.full_topple(st_, stacks, -1)
    assert stacks.consumed_at(-1) == 2
    sl.full_topple(st_, stacks, 0) if sl.is_full_legal(st_, 0) else None


def test_already_stable_zero_odometer():
    st_ = sl.LatticeState.from_counts(0, [0, 1, 1, 1, 0])
    _, odo = sl.stabilize_full(st_, sl.StackSet(0, 5, 3))
    assert odo.total == 0
    assert list(st_.eta) == [0, 1, 1, 1, 0]


def test_abelian_policies_and_consumption_identity():
    eta = [0, 0, 1, 4, 0, 2, 1, 0, 0]
    outs = []
    for p, policy in enumerate(["leftmost", "rightmost", "random", "queue", "stack"]):
        st_ = sl.LatticeState.from_counts(-4, eta)
        stacks = sl.StackSet(-4, 5, 21)
        _, odo = sl.stabilize_full(st_, stacks, policy=policy, policy_seed=p)
        outs.append((list(st_.eta), list(odo.counts)))
        # a full toppling consumes exactly two instructions at its site
        np.testing.assert_array_equal(stacks.consumed[:, 0], 2 * odo.counts)
    assert all(o == outs[0] for o in outs)


def test_half_mode_identities():
    eta = [0, 1, 3, 0, 2, 1, 0]
    st_ = sl.LatticeState.from_counts(0, eta)
    stacks = sl.StackSet(0, 7, 5)
    _, odo = sl.stabilize_half(st_, stacks)
    assert odo.mode == "half"
    # consumed count equals the half odometer, and parity tracks it mod 2
    np.testing.assert_array_equal(stacks.consumed[:, 0], odo.counts)
    np.testing.assert_array_equal(odo.counts[1:-1] % 2, st_.omega[1:-1].astype(np.int64))
    # no site is left half-legal
    assert not any(sl.is_half_legal(st_, x) for x in range(1, 6))


def test_all_zero_eta_zero_half_odometer():
    st_ = sl.LatticeState.from_counts(0, [0, 0, 0, 0, 0])
    _, odo = sl.stabilize_half(st_, sl.StackSet(0, 5, 1))
    assert odo.total == 0


@settings(max_examples=25, deadline=None)
@given(data=st.data())
def test_half_bound_and_monotonicity(data):
    n = data.draw(st.integers(5, 16))
    eta = np.zeros(n, dtype=np.int64)
    for _ in range(data.draw(st.integers(1, 8))):
        eta[data.draw(st.integers(1, n - 2))] += 1
    seed = data.draw(st.integers(0, 2**40))
    st_f = sl.LatticeState.from_counts(0, eta)
    _, odo_f = sl.stabilize_full(st_f, sl.StackSet(0, n, seed))
    st_h = sl.LatticeState.from_counts(0, eta)
    _, odo_h = sl.stabilize_half(st_h, sl.StackSet(0, n, seed))
    assert np.all(odo_h.counts <= 2 * odo_f.counts)
    # adding one particle never decreases the full odometer anywhere
    x = data.draw(st.integers(1, n - 2))
    eta2 = eta.copy()
    eta2[x] += 1
    st2 = sl.LatticeState.from_counts(0, eta2)
    _, odo2 = sl.stabilize_full(st2, sl.StackSet(0, n, seed))
    assert np.all(odo2.counts >= odo_f.counts)


def test_micro_oracle_agreement():
    gen = np.random.default_rng(17)
    for k in range(8):
        n = int(gen.integers(3, 8))
        eta = np.zeros(n, dtype=np.int64)
        for s in gen.integers(1, n - 1, size=int(gen.integers(1, 5))):
            eta[s] += 1
        stacks = sl.StackSet(0, n, 100 + k)
        ref = oracles.exhaustive_stabilize_full(eta, stacks, 0)
        st_ = sl.LatticeState.from_counts(0, eta)
        _, odo = sl.stabilize_full(st_, sl.StackSet(0, n, 100 + k))
        assert tuple(st_.eta) == ref.eta
        assert tuple(odo.counts) == ref.odometer


def test_activity_proxy_empty_law():
    curve = activity_proxy(DensitySpec("constant", value=0), [4, 8], seed=3)
    assert curve.odometer_at_origin == [0, 0]


def test_activity_proxy_coupled_monotone():
    for seed in range(5):
        curve = activity_proxy(DensitySpec("poisson", mu=1.2), [8, 16, 32], seed=seed)
        v = curve.odometer_at_origin
        assert v[0] <= v[1] <= v[2]


def test_initial_law_is_site_coupled():
    spec = DensitySpec("poisson", mu=1.5)
    small = sample_initial(spec, -8, 8, seed=9)
    big = sample_initial(spec, -16, 16, seed=9)
    for x in range(-7, 8):
        assert small.eta_at(x) == big.eta_at(x)


def test_density_spec_validation():
    with pytest.raises(sl.ConfigError):
        DensitySpec("finite", support=((0, 0.5), (1, 0.4)))  # mass 0.9
    with pytest.raises(sl.ConfigError):
        DensitySpec("weird")
    assert DensitySpec("finite", support=((0, 0.5), (2, 0.5))).mean == 1.0

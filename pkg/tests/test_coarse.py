import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinising.coarse import (CoarseGrainConfig, IncrementalBlocks, block_magnetizations, count_bad_blocks,
                             count_blocks, count_minus_blocks, partition, phase_labels, select_block_side,
                             spontaneous_magnetization_2d)
from kinising.lattice import GibbsSpec, LatticeDomain, SpinConfig
from kinising.rates import RateModel
from kinising.yau import YauTestFunction, sample_equilibrium

M_STAR_06 = spontaneous_magnetization_2d(0.6)


def test_spontaneous_magnetization_value():
    # (1 - sinh(1.2)^-4)^(1/8)
    assert abs(M_STAR_06 - 0.9736088) < 1e-6
    assert spontaneous_magnetization_2d(0.3) == 0.0


def test_block_side_rule():
    assert select_block_side(64) == math.ceil(2 * math.log(64))
    assert select_block_side(2) == 2
    assert select_block_side(1) == 1
    cfg = CoarseGrainConfig.from_rule(32, 0.9)
    assert cfg.K == 7
    with pytest.raises(ValueError):
        CoarseGrainConfig(0, 0.5)
    with pytest.raises(ValueError):
        CoarseGrainConfig(2, 1.5)


def test_partition_examples():
    g = partition(LatticeDomain(2, 8), 2)
    assert g.n_blocks == 16 and np.all(g.sizes == 4)
    g = partition(LatticeDomain(2, 7), 2)
    assert g.n_blocks == 9
    # the last block along each axis has width 3
    widths = [2, 2, 3]
    expect = sorted(a * b for a in widths for b in widths)
    assert sorted(g.sizes.tolist()) == expect and g.per_axis == 3
    assert partition(LatticeDomain(3, 4), 4).n_blocks == 1
    with pytest.raises(ValueError):
        partition(LatticeDomain(2, 3), 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.sampled_from([2, 3]))
def test_partition_is_partition(N, K, d):
    if K > N or (d == 3 and N > 8):
        return
    g = partition(LatticeDomain(d, N), K)
    assert g.sizes.sum() == N**d
    assert g.n_blocks >= (N // K) ** d
    ptr, order = g.ptr_sites
    assert sorted(order.tolist()) == list(range(N**d))


def test_block_magnetizations():
    dom = LatticeDomain(2, 4)
    g = partition(dom, 2)
    assert np.all(block_magnetizations(SpinConfig.all_plus(dom), g) == 1)
    assert np.all(block_magnetizations(SpinConfig.all_minus(dom), g) == -1)
    arr = np.ones(16, dtype=np.int8)
    arr[g.sites(0)[0]] = -1
    assert block_magnetizations(SpinConfig.from_array(dom, arr), g)[0] == 0.5


def test_phase_labels():
    assert phase_labels([1.0], M_STAR_06)[0] == 1
    for m in (0.1, 0.5, M_STAR_06):
        assert phase_labels([0.0], m)[0] == 0
        assert phase_labels([-m], m)[0] == -1
    # windows are disjoint for every m*
    s = np.linspace(-1, 1, 2001)
    for m in (0.05, 0.5, 1.0):
        lab = phase_labels(s, m)
        assert not np.any((np.abs(s - m) <= m / 4) & (np.abs(s + m) <= m / 4))
        assert set(np.unique(lab)) <= {-1, 0, 1}


def test_counts():
    m = M_STAR_06
    c = count_blocks(np.ones(9), m)
    assert (c.bad, c.minus, c.ramp) == (0, 0, 0)
    c = count_blocks(-np.ones(9), m)
    assert c.minus == 9 and c.ramp == 0 and c.bad == 0
    M = np.ones(9)
    M[4] = -m / 3
    c = count_blocks(M, m)
    assert (c.ramp, c.minus, c.bad) == (1, 1, 1)
    assert count_bad_blocks(phase_labels(M, m)) == 1 and count_minus_blocks(M, m) == 1


def test_incremental_blocks_match_full(rng):
    dom = LatticeDomain(2, 9)
    g = partition(dom, 4)
    cfg = SpinConfig.random(dom, rng)
    inc = IncrementalBlocks(cfg, g)
    for x in rng.integers(0, dom.n_sites, 300):
        inc.flip(int(x))
        cfg.flip(int(x))
    np.testing.assert_array_equal(inc.magnetizations, block_magnetizations(cfg, g))


def test_bad_block_fraction_decreases_with_K():
    spec = GibbsSpec(0.6, LatticeDomain(2, 32))
    model = RateModel("heat-bath", 0.6)
    fr = []
    for K in (2, 4, 8):
        tf = YauTestFunction(1.0, M_STAR_06, K, 32, 2)
        s = sample_equilibrium(spec, model, tf, 2000, seed=K, burn_in=200)
        x = s.bad / s.n_blocks
        b = x.reshape(50, -1).mean(axis=1)
        fr.append((x.mean(), b.std(ddof=1) / math.sqrt(50)))
    for (m1, s1), (m2, s2) in zip(fr, fr[1:]):
        assert m2 <= m1 + 3 * math.hypot(s1, s2)

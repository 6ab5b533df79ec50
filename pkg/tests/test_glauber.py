import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinising.glauber import (advance, agreement_experiment, check_detailed_balance, flip_rate, simulate_coupled,
                              simulate_ct)
from kinising.lattice import GibbsSpec, LatticeDomain, SpinConfig, enumerate_gibbs
from kinising.rates import RateModel
from kinising.stats import stream


def test_flip_rate_examples(rng):
    dom = LatticeDomain(2, 4)
    hb0 = RateModel("heat-bath", 0.0)
    for _ in range(20):
        cfg = SpinConfig.random(dom, rng)
        assert flip_rate(hb0, cfg, int(rng.integers(dom.n_sites))) == 0.5
    beta = 0.6
    one = SpinConfig.all_plus(LatticeDomain(2, 1))
    assert math.isclose(flip_rate(RateModel("heat-bath", beta), one, 0), 1 / (1 + math.exp(8 * beta)), rel_tol=1e-14)
    minus = SpinConfig.all_minus(LatticeDomain(2, 1))  # dH = -8
    assert flip_rate(RateModel("metropolis", beta), minus, 0) == 1.0


def test_metropolis_negative_dh_is_one():
    m = RateModel("metropolis", 0.8)
    assert np.all(m.rate(np.array([-8, -4, 0])) == 1.0)


@pytest.mark.parametrize("kind", ["heat-bath", "metropolis"])
def test_detailed_balance_examples(kind):
    spec = GibbsSpec(0.6, LatticeDomain(2, 4))
    rep = check_detailed_balance(RateModel(kind, 0.6), spec, 1000, seed=3)
    assert rep.max_violation < 1e-12
    assert rep.rates_within_bound
    rep0 = check_detailed_balance(RateModel(kind, 0.0), GibbsSpec(0.0, spec.domain), 200)
    assert rep0.max_violation == 0.0
    assert rep0.min_rate == rep0.max_rate == (0.5 if kind == "heat-bath" else 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["heat-bath", "metropolis"]), st.floats(0.0, 1.5))
def test_finite_range(seed, kind, beta):
    dom = LatticeDomain(2, 6)
    r = np.random.default_rng(seed)
    cfg = SpinConfig.random(dom, r)
    x = int(r.integers(dom.n_sites))
    star = set(dom.neighbors(x)) | {x}
    others = [y for y in range(dom.n_sites) if y not in star]
    model = RateModel(kind, beta)
    before = flip_rate(model, cfg, x)
    mod = cfg.copy()
    for y in r.choice(others, size=5, replace=False):
        mod.flip(int(y))
    assert flip_rate(model, mod, x) == before


def test_rate_bound_all_classes():
    for kind in ("heat-bath", "metropolis"):
        for beta in (0.0, 0.4, 1.2):
            for d in (2, 3):
                m = RateModel(kind, beta)
                c = m.class_rates(d)
                k = m.bound(d)
                assert np.all(c >= (1 - 1e-12) / k) and np.all(c <= k)


def test_simulate_ct_horizon_zero():
    cfg = SpinConfig.random(LatticeDomain(2, 4), np.random.default_rng(0))
    tr = simulate_ct(RateModel("heat-bath", 0.5), cfg, 0.0, seed=1)
    assert len(tr) == 0 and tr.final() == cfg


def test_simulate_ct_deterministic_and_replays():
    cfg = SpinConfig.all_minus(LatticeDomain(2, 5))
    a = simulate_ct(RateModel("metropolis", 0.4), cfg, 30.0, seed=9)
    b = simulate_ct(RateModel("metropolis", 0.4), cfg, 30.0, seed=9)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.sites, b.sites)
    assert np.all(np.diff(a.times) > 0)
    arr = cfg.to_array()
    for s, v in zip(a.sites, a.spins):
        assert arr[s] != v
        arr[s] = v
    assert SpinConfig.from_array(cfg.domain, arr) == a.final()


def test_simulate_ct_jit_matches_python():
    cfg = SpinConfig.random(LatticeDomain(2, 4), np.random.default_rng(5))
    model = RateModel("heat-bath", 0.45)
    a = simulate_ct(model, cfg, 20.0, seed=2, use_jit=True)
    b = simulate_ct(model, cfg, 20.0, seed=2, use_jit=False)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.sites, b.sites) and np.array_equal(a.spins, b.spins)


def test_two_state_time_average():
    beta = 0.6
    model = RateModel("heat-bath", beta)
    dom = LatticeDomain(2, 1)
    p = math.exp(8 * beta) / (1 + math.exp(8 * beta))
    tr = simulate_ct(model, SpinConfig.all_plus(dom), 1e4, seed=4)
    dur, codes = tr.segments()
    frac_plus = dur[codes == 1].sum() / tr.horizon
    # sojourns in "-" are independent; the time fraction is a renewal-reward average
    n_minus = max(int(np.sum(codes == 0)), 1)
    rate_minus = 1 - 1 / (1 + math.exp(8 * beta))  # rate of leaving -
    se = math.sqrt(2 * n_minus) / rate_minus / tr.horizon
    assert abs(frac_plus - p) <= 3 * se


def _level_batches(tr, n_batches, n_sites):
    """Per-batch fraction of time spent at each magnetization level."""
    dur, codes = tr.segments()
    ends = np.cumsum(dur)
    starts = ends - dur
    bits = np.array([bin(int(c)).count("1") for c in codes])
    edges = np.linspace(0, tr.horizon, n_batches + 1)
    out = np.zeros((n_batches, n_sites + 1))
    for k in range(n_batches):
        lo, hi = edges[k], edges[k + 1]
        w = np.clip(np.minimum(ends, hi) - np.maximum(starts, lo), 0, None)
        out[k] = np.bincount(bits, weights=w, minlength=n_sites + 1)[: n_sites + 1] / (hi - lo)
    return out


@pytest.mark.parametrize("kind", ["heat-bath", "metropolis"])
def test_marginal_correctness_3x3(kind):
    beta = 0.3
    spec = GibbsSpec(beta, LatticeDomain(2, 3))
    tab = enumerate_gibbs(spec)
    plus_count = (tab.states > 0).sum(axis=1)
    exact = np.bincount(plus_count, weights=tab.probs, minlength=10)
    tr = simulate_ct(RateModel(kind, beta), SpinConfig.all_plus(spec.domain), 4000.0, seed=11)
    occ = tr.occupation()
    assert abs(sum(occ.values()) - 1) < 1e-9
    b = _level_batches(tr, 40, 9)
    mean, se = b.mean(axis=0), b.std(axis=0, ddof=1) / math.sqrt(40)
    big = exact > 0.01
    assert np.all(np.abs(mean - exact)[big] <= 3 * se[big] + 1e-12)


def test_random_scan_agrees_with_continuous_time():
    beta = 0.3
    dom = LatticeDomain(2, 3)
    model = RateModel("heat-bath", beta)
    rng = stream(21)
    pad = SpinConfig.all_plus(dom).padded()
    advance(pad, dom, model, 50.0, rng)
    mags = []
    for _ in range(20000):
        advance(pad, dom, model, 1.0, rng)
        mags.append(pad[dom.site_pad].sum())
    mags = np.array(mags, float)
    tr = simulate_ct(model, SpinConfig.all_plus(dom), 4000.0, seed=22)
    b = _level_batches(tr, 40, 9)
    levels = 2 * np.arange(10) - 9
    ct_batches = b @ levels
    ct_mean, ct_se = ct_batches.mean(), ct_batches.std(ddof=1) / math.sqrt(40)
    rs = mags.reshape(40, -1).mean(axis=1)
    rs_mean, rs_se = rs.mean(), rs.std(ddof=1) / math.sqrt(40)
    assert abs(ct_mean - rs_mean) <= 3 * math.hypot(ct_se, rs_se)


def test_coupling_requires_heat_bath():
    dom = LatticeDomain(2, 3)
    with pytest.raises(ValueError):
        simulate_coupled(RateModel("metropolis", 0.5), SpinConfig.all_minus(dom), SpinConfig.all_plus(dom), 1.0, 0)


def test_coupling_equal_states_stay_equal():
    dom = LatticeDomain(2, 8)
    a = SpinConfig.random(dom, np.random.default_rng(1))
    st_ = simulate_coupled(RateModel("heat-bath", 0.6), a, a.copy(), 50.0, 3, n_checks=10)
    assert st_.a == st_.b and st_.order_violations == 0


def test_coupling_monotone_16x16():
    dom = LatticeDomain(2, 16)
    st_ = simulate_coupled(RateModel("heat-bath", 0.6), SpinConfig.all_minus(dom), SpinConfig.all_plus(dom),
                           100.0, 7, n_checks=200)
    assert st_.order_violations == 0 and st_.n_checks == 200 and st_.a <= st_.b


def test_coupling_beta0_coalesces():
    dom = LatticeDomain(2, 6)
    st_ = simulate_coupled(RateModel("heat-bath", 0.0), SpinConfig.all_minus(dom), SpinConfig.all_plus(dom), 30.0, 1)
    # every site has rung at least once with overwhelming probability
    assert st_.a == st_.b


def test_agreement_t0_product_identity():
    spec = GibbsSpec(0.6, LatticeDomain(2, 5))
    res = agreement_experiment(spec, RateModel("heat-bath", 0.6), [0.0], 1500, seed=2, burn_in=30.0)
    p = res.plus_fraction
    assert 0 <= res.disagreement[0] <= 1 and res.stderr[0] >= 0
    se = math.hypot(res.stderr[0], 2 * abs(1 - 2 * p) * math.sqrt(p * (1 - p) / (2 * res.replicas)))
    assert abs(res.disagreement[0] - 2 * p * (1 - p)) <= 3 * se


def test_agreement_beta0_decay():
    t = np.array([0.0, 0.5, 1.0, 2.0])
    spec = GibbsSpec(0.0, LatticeDomain(2, 3))
    res = agreement_experiment(spec, RateModel("heat-bath", 0.0), t, 4000, seed=5, burn_in=5.0)
    expect = res.disagreement[0] * np.exp(-t)
    se = np.hypot(res.stderr, res.stderr[0] * np.exp(-t))
    assert np.all(np.abs(res.disagreement - expect) <= 3 * se + 1e-12)
    assert np.all((res.disagreement >= 0) & (res.disagreement <= 1))

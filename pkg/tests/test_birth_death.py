import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import eigh_tridiagonal
from scipy.special import logsumexp

from kinising.birth_death import (GAP_COLLISION, _symmetrized, build_chain, empirical_hitting_times,
                                  exact_inverse_gap, expected_hitting_time, hardy_gap_bound, hardy_ls_bound,
                                  hardy_report, hardy_scan, ls_lower_bound_numeric, scaling_experiment,
                                  simulate_bd, stationary)
from kinising.functional import ls_ratio

E = math.e
# frozen once from d = 2, N <= 64: the ratio ranges over [2.06, 2.63]
TAIL_K = 2.7


def test_build_chain_examples():
    ch = build_chain(2, 3)
    assert ch.alpha == 0.5
    assert ch.birth[0] == 1.0 and ch.birth[4] == 2.0 and ch.birth[9] == 0.0  # top has no birth
    assert build_chain(2, 4).birth[9] == pytest.approx(3.0, rel=1e-15)
    assert ch.death[1] == pytest.approx(E, rel=1e-14)
    assert ch.death[5] == pytest.approx(2 * math.exp(math.sqrt(5) - 2), rel=1e-14)
    assert ch.death[5] == pytest.approx(2.5325207689, abs=1e-9)
    assert ch.death[0] == 0.0
    # mu(0) b(0) = 1 = mu(1) d(1), unnormalized
    assert math.exp(ch.log_weight[0] + ch.log_birth[0]) == 1.0
    assert math.exp(ch.log_weight[1] + ch.log_death[1]) == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(ValueError):
        build_chain(1, 3)
    with pytest.raises(ValueError):
        build_chain(2, 0)


def test_stationary_examples():
    mu = stationary(build_chain(2, 1))
    np.testing.assert_allclose(mu, [1 / (1 + 1 / E), (1 / E) / (1 + 1 / E)], rtol=1e-14)
    assert mu == pytest.approx([0.731059, 0.268941], abs=1e-6)
    for d, N in ((2, 30), (3, 8)):
        mu = stationary(build_chain(d, N))
        assert abs(mu.sum() - 1) < 1e-14
        assert np.all(np.diff(mu) < 0)


@pytest.mark.parametrize("d,N", [(2, 1), (2, 40), (2, 64), (3, 12), (3, 16)])
def test_detailed_balance_and_drift(d, N):
    ch = build_chain(d, N)
    assert ch.detailed_balance_error() < 1e-12
    x = np.arange(1, ch.top)
    assert np.all(ch.birth[x] - ch.death[x] < 0)
    assert np.all(np.isfinite(ch.log_death[1:])) and np.all(np.isfinite(ch.log_birth[:-1]))


def test_tail_estimate_bracket():
    for N in (16, 32, 64):
        ch = build_chain(2, N)
        Z = logsumexp(ch.log_weight)
        x = np.arange(16, N * N // 2 + 1)
        r = np.exp(ch.log_tail[x] + Z - (0.5 * np.log(x) - np.sqrt(x)))
        assert np.all((r >= 1 / TAIL_K) & (r <= TAIL_K))


def _hardy_brute(ch, with_log):
    """Direct triple loop over anchors, targets and edges in plain floats."""
    mu = np.exp(ch.log_mu)
    c = mu[:-1] * ch.birth[:-1]
    m = ch.n_states
    best = math.inf
    for i in range(m):
        bp = bm = 0.0
        for x in range(i + 1, m):
            r = sum(1 / c[y] for y in range(i, x))
            t = mu[x:].sum()
            bp = max(bp, r * t * (math.log(1 / t) if with_log else 1.0))
        for x in range(i):
            r = sum(1 / c[y] for y in range(x, i))
            h = mu[: x + 1].sum()
            bm = max(bm, r * h * (math.log(1 / h) if with_log else 1.0))
        best = min(best, max(bp, bm))
    return best


@pytest.mark.parametrize("d,N", [(2, 1), (2, 2), (2, 5), (2, 9), (2, 14), (3, 2), (3, 5)])
def test_hardy_matches_brute_force(d, N):
    ch = build_chain(d, N)
    assert ch.n_states <= 200
    rep = hardy_report(ch)
    b = _hardy_brute(ch, False)
    a = _hardy_brute(ch, True)
    assert abs(rep.B - b) <= 1e-10 * b
    assert abs(rep.A - a) <= 1e-10 * a


def test_hardy_scan_jit_matches_python():
    ch = build_chain(2, 12)
    m = ch.n_states
    outs = []
    for k in (hardy_scan.py, hardy_scan.jit):
        bp, bm = np.empty(m), np.empty(m)
        ap, am = np.empty(m, dtype=np.int64), np.empty(m, dtype=np.int64)
        with np.errstate(divide="ignore", invalid="ignore"):
            k(ch.log_resistance, ch.log_tail, ch.log_head, np.zeros(m), np.zeros(m), bp, bm, ap, am)
        outs.append((bp, bm, ap, am))
    for a, b in zip(*outs):
        np.testing.assert_allclose(a, b, rtol=1e-13)


def test_hardy_two_state():
    rep = hardy_gap_bound(build_chain(2, 1))
    assert abs(rep.B - 1 / E) < 1e-12
    assert rep.gap.anchor == 0
    assert rep.gap.minus[0] == 0.0
    assert rep.gap.plus[1] == 0.0


@settings(max_examples=20, deadline=None)
@given(st.sampled_from([2, 3]), st.integers(1, 12))
def test_hardy_invariants(d, N):
    if d == 3 and N > 7:
        return
    rep = hardy_report(build_chain(d, N))
    for scan in (rep.gap, rep.ls):
        assert np.all(scan.plus >= 0) and np.all(scan.minus >= 0)
        assert np.all(scan.value <= scan.per_anchor)
        assert 0 < scan.value < math.inf


def test_exact_gap_examples():
    assert abs(exact_inverse_gap(build_chain(2, 1)) - 1 / (1 + E)) < 1e-12
    S = [exact_inverse_gap(build_chain(2, N)) for N in range(2, 17)]
    assert np.all(np.diff(S) >= -1e-12)
    for N in range(2, 17):
        ch = build_chain(2, N)
        B = hardy_gap_bound(ch).B
        assert B / 2 - 1e-9 <= S[N - 2] <= 4 * B + 1e-9


def test_exact_gap_matches_scipy():
    ch = build_chain(2, 20)
    diag, off = _symmetrized(ch)
    lam = eigh_tridiagonal(diag, off, eigvals_only=True, select="i", select_range=(0, 1))
    assert abs(lam[0]) < 1e-10
    assert exact_inverse_gap(ch) == pytest.approx(1 / lam[1], rel=1e-9)
    assert GAP_COLLISION == 1e-13
    with pytest.raises(ValueError):
        exact_inverse_gap(build_chain(2, 142))


def test_hitting_time_examples():
    ch = build_chain(2, 1)
    assert abs(expected_hitting_time(ch, 1) - 1 / E) < 1e-12
    assert expected_hitting_time(ch, 0) == 0.0
    with pytest.raises(ValueError):
        expected_hitting_time(ch, 2)
    with pytest.raises(ValueError):
        expected_hitting_time(ch, 1, target=1)
    # one-step decomposition summed by hand
    ch = build_chain(2, 3)
    mu = stationary(ch)
    expect = sum(mu[x:].sum() / (mu[x] * ch.death[x]) for x in range(1, 10))
    assert expected_hitting_time(ch, 9) == pytest.approx(expect, rel=1e-12)


def test_simulate_bd_examples():
    ch = build_chain(2, 1)
    tr = simulate_bd(ch, 1, 0.0, seed=0)
    assert tr.times.size == 0
    t = empirical_hitting_times(ch, 1, 100_000, seed=1)
    se = t.std(ddof=1) / math.sqrt(t.size)
    assert abs(t.mean() - 1 / E) <= 3 * se
    with pytest.raises(ValueError):
        simulate_bd(ch, 5, 1.0, 0)


def test_simulate_bd_occupation():
    ch = build_chain(2, 3)
    mu = stationary(ch)
    n_batch = 40
    occ = np.array([simulate_bd(ch, 0, 500.0, seed=s).occupation(ch.n_states) for s in range(n_batch)])
    m, se = occ.mean(axis=0), occ.std(axis=0, ddof=1) / math.sqrt(n_batch)
    big = mu > 1e-3
    assert np.all(np.abs(m - mu)[big] <= 3 * se[big])


def test_empirical_hitting_matches_exact():
    ch = build_chain(2, 4)
    t = empirical_hitting_times(ch, ch.top, 4000, seed=5)
    se = t.std(ddof=1) / math.sqrt(t.size)
    assert abs(t.mean() - expected_hitting_time(ch, ch.top)) <= 3 * se


def test_ls_numeric_bound():
    for N in (2, 6, 12):
        ch = build_chain(2, N)
        res = ls_lower_bound_numeric(ch, iterations=200)
        A = hardy_ls_bound(ch).A
        assert res.value <= 20 * A
        assert res.value == pytest.approx(ls_ratio(stationary(ch), ch.edges(), res.f), rel=1e-12)
        assert res.inconclusive == (res.value < A / 20)
    with pytest.raises(ValueError):
        ls_lower_bound_numeric(build_chain(2, 45))


def test_log_factor_diagnostic():
    rep = hardy_report(build_chain(2, 10))
    diag = rep.log_factor_diagnostic()
    assert diag is None or diag > 0


def test_scaling_experiment_shape():
    rep = scaling_experiment(2, [4, 5, 6, 7, 8])
    assert len(rep.rows) == 5 and all(r.sandwich_ok for r in rep.rows)
    assert set(rep.slopes) == {"S", "B", "A", "hitting"}
    assert rep.S_ratio >= 1
    with pytest.raises(ValueError):
        scaling_experiment(2, [2, 3, 4])

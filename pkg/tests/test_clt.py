import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ifs_ergodic import StreamSpec, ValidationError, run_trajectory
from ifs_ergodic import chain, clt

from oracles import AM2_NODES, dual_apply, word_law

phi = lambda x: np.asarray(x, dtype=float) - 0.5
zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))


def _sum_table(x, n):
    """(prob, S_n / sqrt(n)) over all words, by brute force."""
    return [(p, math.fsum(s - 0.5 for s in st_) / math.sqrt(n)) for _, p, st_ in word_law(AM2_NODES, (0.5, 0.5), x, n)]


def test_sums_trivial(AM2):
    s = clt.normalized_sums(AM2, zero, 0.3, 50, 100, 1, center=0.0)
    assert np.all(s.samples == 0)
    s = clt.normalized_sums(AM2, lambda x: np.asarray(x, dtype=float), 0.0, 50, 100, 1, center=0.0)
    assert np.all(s.samples == 0)


def test_sums_n2_against_four_word_table(AM2):
    table = _sum_table(0.5, 2)
    assert len(table) == 4
    m2 = math.fsum(p * v * v for p, v in table)
    # by hand: S_2 in {-5/8, 0, 0, 5/8} / sqrt 2 ... the two mixed words cancel
    assert sorted(round(v * math.sqrt(2), 12) for _, v in table) == [-0.625, -0.125, 0.125, 0.625]
    s = clt.normalized_sums(AM2, phi, 0.5, 2, 10**6, 9, center=0.0)
    est, se = clt.estimate_sigma2(s.samples)
    assert abs(est - m2) <= 3 * se
    vals, w = clt.exact_sum_law(AM2, phi, 0.5, 2)
    assert math.fsum(w * vals**2) == pytest.approx(m2, abs=1e-15)


@given(st.integers(0, 2**40), st.floats(0.0, 1.0))
@settings(max_examples=25)
def test_sum_additivity(seed, x):
    from ifs_ergodic import am2

    s = am2()
    n, R = 37, 4
    sums = clt.normalized_sums(s, phi, x, n, R, seed, center=0.125)
    for r in range(R):
        tr = run_trajectory(s, x, n, StreamSpec(seed, r))
        acc = 0.0
        for v in tr.states:
            acc += (v - 0.5) - 0.125
        assert sums.samples[r] == acc / math.sqrt(n)


def test_exact_sum_law_matches_oracle(AM2):
    vals, w = clt.exact_sum_law(AM2, phi, 0.3, 6)
    table = _sum_table(0.3, 6)
    assert np.allclose(vals, [v for _, v in table], atol=1e-14, rtol=0)
    assert np.allclose(w, [p for p, _ in table], atol=0, rtol=1e-15)


def test_center_estimate(AM2):
    c = clt.estimate_center(AM2, phi, 3, n_burn=500, R=20_000)
    assert c.source == "burn-in" and abs(c.value) <= 3 * c.stderr
    s = clt.normalized_sums(AM2, phi, 0.5, 5, 10, 3, center=c)
    assert s.center is c


def test_sigma2():
    assert clt.estimate_sigma2(np.zeros(100)) == (0.0, 0.0)
    rng = np.random.default_rng(5)
    x = rng.normal(0, 2, 10**5)
    est, se = clt.estimate_sigma2(x)
    assert abs(est - 4) <= 3 * se
    # jackknife of a mean equals the textbook standard error
    assert se == pytest.approx(np.std(x * x, ddof=1) / math.sqrt(x.size), rel=1e-9)
    with pytest.raises(ValidationError):
        clt.estimate_sigma2(np.ones(29))


@given(st.lists(st.floats(-100, 100), min_size=30, max_size=60), st.integers(-8, 8))
def test_sigma2_scale_equivariant(xs, e):
    c = 2.0**e
    a, _ = clt.estimate_sigma2(np.array(xs))
    b, _ = clt.estimate_sigma2(c * np.array(xs))
    assert b == c * c * a


def test_ks_examples():
    R = 1000
    q = stats.norm.ppf((np.arange(1, R + 1) - 0.5) / R)
    D, _ = clt.ks_statistic(q, 1.0)
    assert D == pytest.approx(1 / (2 * R), abs=1e-12)
    assert clt.ks_statistic(np.zeros(10), 1.0)[0] == 0.5
    with pytest.raises(ValidationError):
        clt.ks_statistic(q, 0.0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ks_matches_scipy(seed):
    x = np.random.default_rng(seed).normal(0, 1.3, 2000)
    D, p = clt.ks_statistic(x, 1.3)
    ref = stats.kstest(x, "norm", args=(0, 1.3))
    assert D == pytest.approx(ref.statistic, abs=1e-14)
    assert p == pytest.approx(stats.kstwobign.sf(math.sqrt(x.size) * D), abs=1e-12)


@pytest.mark.parametrize("lam", [0.05, 0.3, 0.6, 0.9, 0.99, 1.0, 1.2, 1.5, 2.5, 4.0])
def test_kolmogorov_sf(lam):
    assert clt.kolmogorov_sf(lam) == pytest.approx(stats.kstwobign.sf(lam), abs=1e-12)


@given(st.lists(st.floats(-5, 5), min_size=5, max_size=40), st.floats(0.1, 4), st.integers(-6, 6))
def test_ks_scale_invariant(xs, sigma, e):
    c = 2.0**e
    a = clt.ks_statistic(np.array(xs), sigma)
    b = clt.ks_statistic(c * np.array(xs), c * sigma)
    assert a == b


def test_ks_two_sample_matches_scipy():
    rng = np.random.default_rng(8)
    a, b = rng.normal(size=700), rng.normal(0.1, 1, 450)
    D, p = clt.ks_two_sample(a, b)
    ref = stats.ks_2samp(a, b)
    assert D == pytest.approx(ref.statistic, abs=1e-14)
    m = a.size * b.size / (a.size + b.size)
    assert p == pytest.approx(stats.kstwobign.sf(math.sqrt(m) * D), abs=1e-12)


def test_ks_pvalue_calibration():
    rng = np.random.default_rng(2024)
    ps = [clt.ks_statistic(rng.normal(size=10**4), 1.0)[1] for _ in range(200)]
    assert abs(np.mean(np.array(ps) < 0.05) - 0.05) <= 0.05


def test_char_fn_exact_n1(AM2):
    t = np.linspace(0, 5, 11)
    tab = clt.char_fn(AM2, phi, 0.5, 1, t, mode="exact")
    assert tab.values[0] == 1.0
    assert np.max(np.abs(tab.values - np.cos(t / 4))) <= 1e-12


def test_char_fn_reflection_and_modulus(AM2):
    t = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
    tab = clt.char_fn(AM2, phi, 0.3, 40, t, 2000, 1)
    assert tab.values[2] == 1.0
    assert tab.values[0] == np.conj(tab.values[4]) and tab.values[1] == np.conj(tab.values[3])
    assert np.all(np.abs(tab.values) <= 1 + 3 * tab.stderr + 1e-15)
    with pytest.raises(ValidationError):
        clt.char_fn(AM2, phi, 0.3, 4, [np.inf])
    with pytest.raises(ValidationError):
        clt.char_fn(AM2, phi, "stationary", 4, [1.0], mode="exact")


def test_char_fn_gap(AM2):
    a = clt.char_fn(AM2, phi, 0.3, 1, [1.0], mode="exact")
    b = clt.char_fn(AM2, phi, 0.7, 1, [1.0], mode="exact")
    assert clt.char_fn_gap(a, a)[0] == 0.0
    pa = 0.5 * (np.exp(1j * (0.15 - 0.5)) + np.exp(1j * (0.65 - 0.5)))
    pb = 0.5 * (np.exp(1j * (0.35 - 0.5)) + np.exp(1j * (0.85 - 0.5)))
    assert clt.char_fn_gap(a, b)[0] == pytest.approx(abs(pa - pb), abs=1e-14)
    c = clt.char_fn(AM2, phi, 0.7, 2, [1.0], mode="exact")
    with pytest.raises(ValidationError):
        clt.char_fn_gap(a, c)


def test_quenched_annealed_consistency(AM2):
    t = [0.5, 1.0, 3.0]
    R, seed = 500, 13
    ann = clt.char_fn(AM2, phi, "stationary", 60, t, R, seed, n_burn=200)
    ys = chain.stationary_starts(AM2, R, seed, 200)
    per_point = clt.char_fn(AM2, phi, ys, 60, t, R, seed)
    assert np.array_equal(ann.values, per_point.values)
    # and equal to the average of single-start characteristic functions
    sums = clt.normalized_sums(AM2, phi, ys, 60, R, seed, center=0.0).samples
    avg = np.array([np.mean(np.exp(1j * tt * sums)) for tt in t])
    assert np.allclose(avg, ann.values, atol=1e-14, rtol=0)


def _mw_oracle(y_list, n, phi_scalar):
    G = [math.fsum(dual_apply(AM2_NODES, (0.5, 0.5), phi_scalar, j, y) for j in range(1, n + 1)) for y in y_list]
    return math.sqrt(math.fsum(g * g for g in G) / len(G))


def test_mw_exact_matches_oracle(AM2):
    ys = [0.1, 0.35, 0.5, 0.8]
    m = clt.mw_growth(AM2, phi, [1, 4, 7, 10], ys, mode="exact")
    for n, v in zip(m.n_list, m.norms):
        assert v == pytest.approx(_mw_oracle(ys, n, lambda s: s - 0.5), abs=1e-12)
    assert m.mode == "exact" and np.isfinite(m.exponent)


def test_mw_zero_and_validation(AM2):
    m = clt.mw_growth(AM2, zero, [2, 4], [0.2, 0.6])
    assert np.all(m.norms == 0)
    with pytest.raises(ValidationError):
        clt.mw_growth(AM2, phi, [4, 2], [0.2, 0.6])
    with pytest.raises(ValidationError):
        clt.mw_growth(AM2, phi, [2, 4], [0.2])


def test_mw_mc_agrees_with_exact(AM2):
    ys = chain.stationary_starts(AM2, 40, 1, 300)
    ex = clt.mw_growth(AM2, phi, [3, 6, 9], ys, mode="exact")
    mc = clt.mw_growth(AM2, phi, [3, 6, 9], ys, 4000, 2, mode="mc")
    # the nested estimate has inner noise of order sd/sqrt(inner_R) per point
    assert np.allclose(mc.norms, ex.norms, rtol=0.03)


def test_mw_streams(AM2):
    # outer sample o, inner replica i runs on stream o * 2**32 + i
    ys = np.array([0.3, 0.6])
    m = clt.mw_growth(AM2, phi, [5], ys, 3, 7, mode="mc")
    g = np.empty((2, 3))
    for o in range(2):
        for i in range(3):
            tr = run_trajectory(AM2, ys[o], 5, StreamSpec(7, (o << 32) + i))
            acc = 0.0
            for v in tr.states:
                acc += v - 0.5
            g[o, i] = acc
    sq = g.mean(axis=1) ** 2 - g.var(axis=1, ddof=1) / 3
    assert m.norms[0] == pytest.approx(math.sqrt(max(sq.mean(), 0.0)), rel=1e-12)


def test_clt_report(AM2):
    s = clt.normalized_sums(AM2, phi, 0.5, 100, 500, 1, center=0.0)
    r = clt.clt_report(s, samples_file="s.csv")
    assert r.sigma2_hat >= 0 and 0 <= r.ks_statistic <= 1 and r.samples_file == "s.csv"
    z = clt.clt_report(clt.normalized_sums(AM2, zero, 0.5, 10, 50, 1, center=0.0))
    assert z.ks_statistic is None and "skipped" in z.note

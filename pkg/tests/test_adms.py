import itertools

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from pefad import adms
from pefad.errors import ConfigError, InputError


def oracle_components(x, L):
    """Dense SVD of an explicitly built Hankel matrix + loop-based anti-diagonal averaging."""
    n = len(x)
    H = scipy.linalg.hankel(x[:L], x[L - 1:])
    u, s, vt = scipy.linalg.svd(H, full_matrices=False, lapack_driver="gesvd")
    comps = []
    for k in range(len(s)):
        m = s[k] * np.outer(u[:, k], vt[k])
        series = []
        for t in range(n):
            vals = [m[i, t - i] for i in range(L) if 0 <= t - i < m.shape[1]]
            series.append(sum(vals) / len(vals))
        comps.append(series)
    return s, np.array(comps)


def test_make_patches_counts_and_partition():
    x = np.arange(45.0)
    p = adms.make_patches(x, 10)
    assert p.shape == (4, 10, 1)
    assert np.array_equal(p.reshape(-1), x[:40])
    assert adms.make_patches(np.arange(40.0), 10).shape[0] == 4
    with pytest.raises(InputError):
        adms.make_patches(np.arange(5.0), 10)


def test_ssa_constant_patch_is_rank_one():
    dec = adms.ssa_decompose(np.full(10, 3.0), 5)
    assert dec.singular_values[1:].max() < 1e-12
    assert np.abs(dec.residual).max() < 1e-12
    assert np.allclose(dec.components.sum(axis=0), 3.0, atol=1e-12)


def test_ssa_ramp_matches_dense_oracle():
    x = np.arange(1.0, 11.0)
    dec = adms.ssa_decompose(x, 5)
    s, comps = oracle_components(x, 5)
    assert np.allclose(dec.singular_values, s, atol=1e-12)
    # rank-2 Hankel: only the first two components are well-defined
    assert np.allclose(dec.components[:2], comps[:2], atol=1e-9)
    assert np.allclose(dec.components.sum(axis=0), x, atol=1e-8)


def test_ssa_window_out_of_range():
    with pytest.raises(ConfigError):
        adms.ssa_decompose(np.arange(10.0), 1)
    with pytest.raises(ConfigError):
        adms.ssa_decompose(np.arange(10.0), 10)
    with pytest.raises(ConfigError):
        adms.AdmsConfig(l_p=10, ssa_window=9, r_m=1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 9))
def test_ssa_reconstruction_property(seed, L):
    x = np.random.default_rng(seed).normal(size=10) * 3
    dec = adms.ssa_decompose(x, L)
    assert np.abs(dec.components.sum(axis=0) - x).max() < 1e-8
    assert np.all(np.diff(dec.singular_values) <= 0)


def test_residual_score_constant_and_spike():
    cfg = adms.AdmsConfig()
    assert adms.residual_score(np.full(10, 2.5), cfg) < 1e-12
    t = np.arange(10)
    sine = np.sin(2 * np.pi * t / 10)
    spiky = sine.copy()
    spiky[6] += 5 * sine.std()
    r_clean = adms.residual_score(sine, cfg)
    r_spike = adms.residual_score(spiky, cfg)
    # cross-check: residual from the oracle decomposition using the same index rule
    s, comps = oracle_components(spiky, 5)
    assert r_spike == pytest.approx(np.abs(comps[-1]).mean(), abs=1e-9)
    assert r_spike > r_clean
    tail = adms.AdmsConfig(residual_rule="tail")
    ks = adms._residual_indices(s, tail.energy_tail, "tail")
    assert adms.residual_score(spiky, tail) == pytest.approx(np.abs(comps[list(ks)].sum(axis=0)).mean(), abs=1e-9)


def test_residual_rules():
    sv = np.array([10.0, 3.0, 1.0, 0.5, 0.1])
    assert adms._residual_indices(sv, 0.10, "last") == (4,)
    energy = sv ** 2 / (sv ** 2).sum()
    # tail: components 1..4 carry 8.4% of the energy, adding component 0 exceeds 10%
    assert energy[1:].sum() <= 0.10 < energy.sum()
    assert adms._residual_indices(sv, 0.10, "tail") == (1, 2, 3, 4)
    assert adms._residual_indices(np.array([1.0, 1.0]), 0.10, "tail") == (1,)
    assert adms._residual_indices(np.zeros(3), 0.10, "last") == (0, 1, 2)
    with pytest.raises(ConfigError):
        adms.AdmsConfig(residual_rule="median")


def test_residual_score_is_homogeneous():
    cfg = adms.AdmsConfig()
    rng = np.random.default_rng(5)
    for _ in range(20):
        p = rng.normal(size=(10, 2))
        c = rng.uniform(0.1, 10)
        assert adms.residual_score(c * p, cfg) == pytest.approx(c * adms.residual_score(p, cfg), rel=1e-9)


def test_inter_patch_similarity_cases():
    a = np.array([1.0, 2.0, -1.0, 0.5])
    c = adms.inter_patch_similarity([a, a, -a])
    assert c[0] == 1.0 and c[1] == pytest.approx(1.0) and c[2] == pytest.approx(-1.0)
    c = adms.inter_patch_similarity([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])
    assert c[1] == 0.0
    c = adms.inter_patch_similarity([np.zeros(4), a])
    assert c[1] == 1.0


def test_score_patches_examples():
    t = adms.score_patches([0, 2, 4], [1, 1, 1], beta=0.5)
    assert np.allclose(t.score, [0, 0.25, 0.5])
    r = np.array([0.3, 0.1, 0.9])
    c = np.array([0.2, -0.5, 1.0])
    assert np.array_equal(adms.score_patches(r, c, 1.0).score, adms._minmax(r))
    assert np.array_equal(adms.score_patches(r, c, 0.0).score, adms._minmax((1 - c) / 2))
    flat = adms.score_patches([1, 1, 1], [1, 1, 1], 0.5)
    assert not flat.score.any()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=2, max_size=12), st.floats(-5, 5), st.floats(0, 1))
def test_score_properties(r, shift, beta):
    r = np.array(r)
    c = np.cos(np.arange(len(r)))
    base = adms.score_patches(r, c, beta)
    assert np.all((base.score >= 0) & (base.score <= 1 + 1e-12))
    assert np.array_equal(base.score, beta * base.residual_norm + (1 - beta) * base.similarity_norm)
    shifted = adms.score_patches(r + shift, c, beta)
    assert np.allclose(shifted.score, base.score, atol=1e-9)
    for lo, hi in [(0.3, 0.6), (0.1, 0.9)]:
        assert np.all(adms.score_patches(r, c, beta, lo).flagged
                      >= adms.score_patches(r, c, beta, hi).flagged)


def _table(flags):
    flags = np.asarray(flags, bool)
    z = np.zeros(len(flags))
    return adms.PatchScoreTable(z, z, z, z, flags.astype(float), flags)


def exact_inclusion(weights, k):
    """Inclusion probability of each index under sequential weighted sampling, by enumeration."""
    n = len(weights)
    prob = np.zeros(n)
    for seq in itertools.permutations(range(n), k):
        p, left = 1.0, sum(weights)
        for i in seq:
            p *= weights[i] / left
            left -= weights[i]
        for i in seq:
            prob[i] += p
    return prob


def test_mask_count_contract():
    rng = np.random.default_rng(0)
    plan = adms.select_mask(_table([False] * 10), 0.2, 4.0, rng)
    assert len(plan.masked_indices) == 2 == len(set(plan.masked_indices))
    plan = adms.select_mask(_table([False] * 3), 0.1, 4.0, rng)
    assert len(plan.masked_indices) == 1


def test_boosted_frequency_matches_enumeration():
    flags = [False, False, True, False, False, False]
    rng = np.random.default_rng(11)
    trials = 10_000
    counts = np.zeros(6)
    for _ in range(trials):
        counts[list(adms.select_mask(_table(flags), 0.34, 4.0, rng).masked_indices)] += 1
    expected = exact_inclusion([1, 1, 4, 1, 1, 1], 2)
    assert np.abs(counts / trials - expected).max() <= 0.02


def test_unit_boost_is_uniform():
    flags = [True, False, False, True, False, False, False, False, False, False]
    rng = np.random.default_rng(12)
    counts = np.zeros(10)
    for _ in range(5000):
        counts[list(adms.select_mask(_table(flags), 0.2, 1.0, rng).masked_indices)] += 1
    assert chisquare(counts).pvalue > 0.01

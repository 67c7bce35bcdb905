import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from photoloss.errors import ContractViolation
from photoloss.imaging import WindowSpec, window_stats
from photoloss.proofs import PATCH_KINDS, PropertyResult, random_patch_pair, run_property_suites
from photoloss.ssim import SsimConfig, similarity_from_stats, ssim_scale_invariance_check


def test_small_run_passes_and_covers_kinds():
    rep = run_property_suites(pairs=150, seed=1)
    assert rep.passed
    assert set(rep.kinds) == set(PATCH_KINDS)
    d = rep.to_dict(timing=False)
    assert "seconds" not in d
    assert set(d["properties"]) == {"scale_invariance", "dominance", "k_monotonicity"}
    assert d["properties"]["dominance"]["samples"] > 0
    assert rep.properties["scale_invariance"].max_violation <= 1e-9


def test_gaussian_window_run():
    assert run_property_suites(pairs=20, seed=2, window=WindowSpec.gaussian11()).passed


def test_run_is_seed_deterministic():
    a = run_property_suites(pairs=30, seed=3).to_dict(timing=False)
    b = run_property_suites(pairs=30, seed=3).to_dict(timing=False)
    assert a == b


def test_planted_violation_is_counted():
    r = PropertyResult(1e-12)
    r.update(np.array([0.0, 5e-13, 2e-12]))
    assert r.violations == 1 and not r.passed and r.samples == 3
    assert r.max_violation == 2e-12


def test_bad_arguments():
    with pytest.raises(ContractViolation):
        run_property_suites(pairs=1, k_values=(1.0,))
    with pytest.raises(ContractViolation):
        run_property_suites(pairs=0)
    with pytest.raises(ContractViolation):
        random_patch_pair(np.random.default_rng(0), 1.0, kind="stripes")


@pytest.mark.parametrize("L", [1.0, 255.0])
def test_patch_pairs_in_range(L):
    rng = np.random.default_rng(4)
    for kind in PATCH_KINDS:
        x, y, k = random_patch_pair(rng, L, kind)
        assert k == kind
        assert 8 <= x.shape[0] <= 64 and 8 <= x.shape[1] <= 64
        assert x.data.min() >= 0 and y.data.max() <= L
        if L == 255:
            assert np.all(x.data == np.rint(x.data))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**63 - 1), st.sampled_from([1.0, 255.0]), st.sampled_from(PATCH_KINDS),
       st.floats(1.01, 20.0), st.floats(1.01, 20.0))
def test_order_relations_pointwise(seed, L, kind, k1, k2):
    lo, hi = sorted((k1, k2))
    x, y, _ = random_patch_pair(np.random.default_rng(seed), L, kind, 8, 16)
    cfg = SsimConfig(L=L, k=1.0)
    st_ = window_stats(x.data, y.data)
    base = similarity_from_stats(st_, cfg.C1, cfg.C2).index
    s_lo = similarity_from_stats(st_, cfg.C1, cfg.C2, lo).index
    s_hi = similarity_from_stats(st_, cfg.C1, cfg.C2, hi).index
    assert np.all(s_lo <= base + 1e-12)
    assert np.all(s_hi <= s_lo + 1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**63 - 1), st.sampled_from([1.0, 255.0]), st.floats(0.1, 10.0))
def test_scale_invariance_property(seed, L, k):
    x, y, _ = random_patch_pair(np.random.default_rng(seed), L, None, 8, 16)
    assert ssim_scale_invariance_check(x, y, k, SsimConfig(L=L, k=1.0)) <= 1e-9

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from photoloss.errors import ContractViolation
from photoloss.imaging import DepthMap
from photoloss.metrics import evaluate, lower_median

import oracles


def random_maps(seed, shape=(16, 16)):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(0.5, 12.0, size=shape)
    gt[rng.random(shape) < 0.1] = 0.0
    pred = gt * np.exp(rng.normal(scale=0.3, size=shape))
    pred[gt == 0] = rng.uniform(0.5, 5.0)
    pred[rng.random(shape) < 0.05] = 0.0
    return pred, gt


def report_tuple(r):
    return (r.abs_rel, r.log10, r.rms, r.acc_1, r.acc_2, r.acc_3, r.n_pixels)


@pytest.mark.parametrize("median_scale", [True, False])
def test_matches_loop_oracle(median_scale):
    for seed in range(20):
        pred, gt = random_maps(seed)
        got = report_tuple(evaluate(pred, gt, median_scale=median_scale))
        want = oracles.depth_metrics_loops(pred.tolist(), gt.tolist(), median_scale)
        assert got[-1] == want[-1]
        for a, b in zip(got[:-1], want[:-1]):
            assert abs(a - b) <= 1e-12


def test_perfect_prediction():
    _, gt = random_maps(1)
    r = evaluate(gt, gt)
    assert (r.abs_rel, r.log10, r.rms) == (0.0, 0.0, 0.0)
    assert (r.acc_1, r.acc_2, r.acc_3) == (1.0, 1.0, 1.0)
    assert report_tuple(evaluate(0.5 * gt, gt)) == report_tuple(r)


def test_double_without_scaling():
    gt = np.full((4, 4), 2.0)
    r = evaluate(2 * gt, gt, median_scale=False)
    assert r.abs_rel == 1.0
    assert r.acc_1 == 0.0 and r.acc_3 == 0.0


def test_median_scaling_dyadic_exact_on_random_maps():
    # multiplying by a power of two is exact, so every metric is bitwise unchanged
    pred, gt = random_maps(2)
    base = report_tuple(evaluate(pred, gt))
    for s in (0.5, 2.0, 0.125, 64.0):
        assert report_tuple(evaluate(s * pred, gt)) == base


def test_median_scaling_exact_when_products_are_exact():
    # pred on powers of two: s * pred is exactly representable for s in {0.1, 10}
    rng = np.random.default_rng(3)
    pred = 2.0 ** rng.integers(-3, 4, size=(16, 16))
    gt = rng.uniform(0.5, 9.0, size=(16, 16))
    base = report_tuple(evaluate(pred, gt))
    for s in (0.1, 0.5, 2.0, 10.0):
        scaled = s * pred
        assert np.array_equal(scaled / s, pred)
        assert report_tuple(evaluate(scaled, gt)) == base


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.1, 0.5, 2.0, 10.0, 3.7]))
def test_median_scaling_general_inputs(seed, s):
    # s * pred is rounded before evaluate sees it; the result stays within a few ulps
    pred, gt = random_maps(seed)
    a, b = report_tuple(evaluate(pred, gt)), report_tuple(evaluate(s * pred, gt))
    assert a[-1] == b[-1]
    for x, y in zip(a[:-1], b[:-1]):
        assert abs(x - y) <= 1e-14 * max(1.0, abs(x))


def test_accuracies_ordered():
    for seed in range(10):
        pred, gt = random_maps(seed)
        r = evaluate(pred, gt, median_scale=False)
        assert 0 <= r.acc_1 <= r.acc_2 <= r.acc_3 <= 1


def test_cap_and_validity():
    gt = np.array([[1.0, 11.0], [0.0, 2.0]])
    pred = np.array([[20.0, 1.0], [1.0, 2.0]])
    r = evaluate(pred, gt, median_scale=False)
    assert r.n_pixels == 2
    # pred 20 is capped at 10
    assert r.abs_rel == pytest.approx((9.0 / 1.0 + 0.0) / 2, abs=1e-15)


def test_errors():
    with pytest.raises(ContractViolation):
        evaluate(np.ones((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ContractViolation):
        evaluate(np.ones((2, 2)), np.ones((3, 2)))
    with pytest.raises(ContractViolation):
        lower_median([])


def test_lower_median():
    assert lower_median([4, 1, 3, 2]) == 2
    assert lower_median([5, 1, 3]) == 3


def test_depthmap_inputs_and_dict():
    pred, gt = random_maps(4)
    r = evaluate(DepthMap(pred), DepthMap(gt))
    assert report_tuple(r) == report_tuple(evaluate(pred, gt))
    d = r.to_dict()
    assert set(d) == {"Abs Rel", "Log10", "RMS", "delta<1.25", "delta<1.25^2", "delta<1.25^3", "n_pixels"}

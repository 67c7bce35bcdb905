import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from photoloss import synth
from photoloss.errors import ContractViolation
from photoloss.geometry import PlanarCoeffs, reproject, synthesize_view
from photoloss.imaging import ImagePlane, window_support_mask
from photoloss.losses import (
    LossWeights,
    SampleSets,
    image_gradients,
    line_consistency_loss,
    min_reprojection_reduce,
    multi_source_photometric,
    photometric_loss,
    plane_consistency_loss,
    sample_line_sets,
    sample_plane_sets,
    segment_lattice_points,
    smoothness_loss,
    stage_weights_for,
    total_loss,
)
from photoloss.ssim import SsimConfig, similarity_map


def plane(a, L=1.0):
    return ImagePlane(np.asarray(a, dtype=np.float64), L)


def pair(seed, shape=(12, 14)):
    rng = np.random.default_rng(seed)
    x = rng.random(shape)
    y = np.clip(x + rng.normal(scale=0.1, size=shape), 0, 1)
    return plane(x), plane(y)


# ---- photometric ------------------------------------------------------------


def test_identical_images_zero_loss():
    x, _ = pair(0)
    r = photometric_loss(x, x)
    assert r.loss == 0.0 and r.ssim_part == 0.0 and r.l1_part == 0.0


@pytest.mark.parametrize("k", [1.0, 5.0])
def test_per_pixel_formula(k):
    x, y = pair(1)
    cfg = SsimConfig(k=k)
    r = photometric_loss(x, y, alpha=0.85, ssim_cfg=cfg)
    idx = similarity_map(x, y, cfg).index[..., 0]
    want = 0.425 * (1 - idx) + 0.15 * np.abs(x.data - y.data)[..., 0]
    assert np.max(np.abs(r.per_pixel - want)) <= 1e-15
    assert r.loss == pytest.approx(want.mean(), abs=1e-15)
    assert r.loss == pytest.approx(r.ssim_part + r.l1_part, abs=1e-15)


def test_masked_mean_and_empty_mask():
    x, y = pair(2)
    m = np.zeros(x.shape[:2], dtype=bool)
    m[2:5, 3:9] = True
    r = photometric_loss(x, y, m)
    assert r.loss == pytest.approx(r.per_pixel[m].mean(), abs=1e-15)
    with pytest.raises(ContractViolation):
        photometric_loss(x, y, np.zeros_like(m))
    with pytest.raises(ContractViolation):
        photometric_loss(x, plane(np.zeros((3, 3))))


def test_color_channels_averaged():
    rng = np.random.default_rng(3)
    x = plane(rng.random((8, 8, 3)))
    y = plane(np.clip(x.data + 0.05, 0, 1))
    r = photometric_loss(x, y, ssim_cfg=SsimConfig(k=1.0))
    idx = similarity_map(x, y, SsimConfig(k=1.0)).index
    assert np.allclose(r.per_pixel, (0.425 * (1 - idx) + 0.15 * np.abs(x.data - y.data)).mean(axis=2), atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_loss_non_decreasing_in_k(seed):
    x, y = pair(seed, (9, 9))
    losses = [photometric_loss(x, y, ssim_cfg=SsimConfig(k=k)).loss for k in (1.0, 1.5, 2.0, 5.0, 10.0)]
    assert all(b >= a - 1e-12 for a, b in zip(losses, losses[1:]))
    assert all(l >= 0 for l in losses)


# ---- per-source reduction ---------------------------------------------------


def test_single_source_reduce_is_mean():
    rng = np.random.default_rng(4)
    l = rng.random((5, 6))
    m = np.ones((5, 6), dtype=bool)
    v, _, _ = min_reprojection_reduce([l], [m])
    assert v == pytest.approx(l.mean(), abs=1e-15)
    v2, _, _ = min_reprojection_reduce([l, l], [m, m])
    assert v2 == v


def test_disjoint_occlusions():
    rng = np.random.default_rng(5)
    a, b = rng.random((6, 6)), rng.random((6, 6))
    ma = np.ones((6, 6), dtype=bool)
    ma[:, :2] = False
    mb = np.ones((6, 6), dtype=bool)
    mb[:, 4:] = False
    v, choice, mask = min_reprojection_reduce([a, b], [ma, mb])
    assert mask.all()
    # oracle: pointwise loop
    want = []
    for r in range(6):
        for c in range(6):
            cands = [x[r, c] for x, m in ((a, ma), (b, mb)) if m[r, c]]
            want.append(min(cands))
    assert v == pytest.approx(np.mean(want), abs=1e-15)
    assert v <= a[ma].mean() + 1e-15 or v <= b[mb].mean() + 1e-15
    vm, _, _ = min_reprojection_reduce([a, b], [ma, mb], reduction="mean")
    assert vm >= v


def test_reduce_errors():
    z = np.zeros((3, 3))
    with pytest.raises(ContractViolation):
        min_reprojection_reduce([z], [np.zeros((3, 3), dtype=bool)])
    with pytest.raises(ContractViolation):
        min_reprojection_reduce([z], [np.ones((3, 3), dtype=bool)], reduction="median")


def test_multi_source_components_add_up():
    x, y = pair(6)
    _, z = pair(7)
    m = np.ones(x.shape[:2], dtype=bool)
    for red in ("min", "mean"):
        r = multi_source_photometric(x, [y, z], [m, m], reduction=red)
        assert r.loss == pytest.approx(r.ssim_part + r.l1_part, abs=1e-14)
    one = multi_source_photometric(x, [y], [m])
    assert one.loss == photometric_loss(x, y, m).loss


# ---- smoothness -------------------------------------------------------------


def test_smoothness_constant_coeffs_zero():
    co = PlanarCoeffs.from_plane((0.1, 0.2, 1.0), 2.0, 8, 9)
    img = plane(np.random.default_rng(8).random((8, 9)))
    assert smoothness_loss(co, img) == 0.0


def test_smoothness_scale_invariant():
    rng = np.random.default_rng(9)
    co = PlanarCoeffs(rng.normal(size=(8, 9, 3)))
    img = plane(rng.random((8, 9)))
    base = smoothness_loss(co, img)
    for s in (0.01, 3.0, 250.0):
        assert smoothness_loss(PlanarCoeffs(co.data * s), img) == pytest.approx(base, rel=1e-12)


def test_smoothness_ramp_hand_computed():
    h, w = 6, 7
    co = np.zeros((h, w, 3))
    co[..., 0] = 1.0
    co[..., 1] = 1.0
    co[..., 2] = np.arange(w)[None, :] + 1.0  # ramp along u
    img = plane(np.full((h, w), 0.5))
    # co_z normalised by mean |co_z| = (w + 1) / 2; u-differences are 1/mean on a (h, w-1) grid,
    # v-differences are 0 on (h-1, w); image weights are exp(0) = 1
    want = 1.0 / ((w + 1) / 2)
    assert smoothness_loss(PlanarCoeffs(co), img) == pytest.approx(want, rel=1e-14)


def test_smoothness_zero_channel():
    co = np.ones((5, 5, 3))
    co[..., 0] = 0.0
    img = plane(np.zeros((5, 5)))
    with pytest.raises(ContractViolation):
        smoothness_loss(PlanarCoeffs(co), img)
    assert smoothness_loss(PlanarCoeffs(co), img, skip_zero_channels=True) == 0.0


def test_image_gradients_forward_differences():
    a = np.arange(12.0).reshape(3, 4) ** 2
    gu, gv = image_gradients(a)
    assert gu.shape == (3, 3) and gv.shape == (2, 4)
    assert gu[1, 2] == a[1, 3] - a[1, 2] and gv[1, 2] == a[2, 2] - a[1, 2]


# ---- plane / line -------------------------------------------------------------


def test_plane_consistency_values():
    tet = np.array([[[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]], dtype=float)
    assert plane_consistency_loss(tet) == 1.0
    flat = np.array([[[0, 0, 2], [1, 0, 2], [0, 1, 2], [3, 5, 2]]], dtype=float)
    assert plane_consistency_loss(flat) == 0.0
    rng = np.random.default_rng(10)
    pts = rng.normal(size=(20, 4, 3))
    assert plane_consistency_loss(2.5 * pts) == pytest.approx(2.5**3 * plane_consistency_loss(pts), rel=1e-12)
    with pytest.raises(ContractViolation):
        plane_consistency_loss(np.zeros((0, 4, 3)))


def test_line_consistency_values():
    tri = np.array([[[0, 0, 0], [1, 0, 0], [0, 1, 0]]], dtype=float)
    assert line_consistency_loss(tri) == 1.0
    col = np.array([[[1, 1, 1], [2, 2, 2], [4, 4, 4]]], dtype=float)
    assert line_consistency_loss(col) == 0.0
    rng = np.random.default_rng(11)
    pts = rng.normal(size=(20, 3, 3))
    assert line_consistency_loss(3.0 * pts) == pytest.approx(9.0 * line_consistency_loss(pts), rel=1e-12)
    with pytest.raises(ContractViolation):
        line_consistency_loss(np.zeros((0, 3, 3)))


def test_segment_lattice_points():
    pts = segment_lattice_points((0, 0), (4, 6))
    assert pts.tolist() == [[0, 0], [2, 3], [4, 6]]
    assert segment_lattice_points((1, 1), (1, 1)).tolist() == [[1, 1]]


def test_sample_sets_stay_in_one_region():
    rng = np.random.default_rng(12)
    labels = np.zeros((10, 10), dtype=int)
    labels[:5] = 1
    labels[5:] = 2
    sets = sample_plane_sets(labels, 7, rng)
    assert sets.shape == (14, 4, 2)
    for s in sets:
        assert len({labels[r, c] for r, c in s}) == 1
    lines = sample_line_sets([((0, 0), (0, 9)), ((0, 0), (1, 1))], 5, rng)
    assert lines.shape == (5, 3, 2)
    assert np.all(lines[..., 0] == 0)
    ss = SampleSets(sets, lines)
    ss.check_bounds(10, 10)
    with pytest.raises(ContractViolation):
        ss.check_bounds(4, 10)


def test_consistency_zero_at_ground_truth():
    # fronto-parallel: every back-projected point has the same z, so the losses vanish exactly
    spec = synth.fronto_parallel_scene()
    r = synth.render(spec)
    rng = np.random.default_rng(13)
    ss = SampleSets(sample_plane_sets(r.labels, 50, rng),
                    sample_line_sets([((10, 5), (10, 100)), ((3, 3), (63, 83))], 20, rng))
    assert plane_consistency_loss(ss.plane_points(r.depth, spec.intrinsics)) == 0.0
    assert line_consistency_loss(ss.line_points(r.depth, spec.intrinsics)) == 0.0
    # room: planar regions and their edge segments, exact up to rounding
    spec = synth.room_scene()
    r = synth.render(spec)
    segs = [(s.start, s.end) for s in r.segments]
    ss = SampleSets(sample_plane_sets(r.labels, 50, rng), sample_line_sets(segs, 20, rng))
    assert len(ss.line_sets) > 0
    assert plane_consistency_loss(ss.plane_points(r.depth, spec.intrinsics)) <= 1e-12
    assert line_consistency_loss(ss.line_points(r.depth, spec.intrinsics)) <= 1e-12


def test_photometric_small_at_ground_truth():
    spec = synth.fronto_parallel_scene()
    rt, rs = synth.render(spec, 0), synth.render(spec, 1)
    T = synth.relative_pose(spec, 0, 1)
    img, m = synthesize_view(rs.image, reproject(None, rt.depth, T, spec.intrinsics))
    # only pixels whose whole SSIM window was resampled from inside the source
    m = window_support_mask(m)
    for k in (1.0, 5.0):
        assert photometric_loss(rt.image, img, m, ssim_cfg=SsimConfig(k=k)).loss <= 1e-3


# ---- total ------------------------------------------------------------------------


def test_total_two_stage_defaults():
    rep = total_loss([0.3, 0.2], LossWeights(), l_sm=0.1, l_pc=0.05, l_lc=0.02)
    assert rep.total == pytest.approx(0.3 + 1.0 * 0.2 + 0.2 * 0.1 + 2.0 * 0.05 + 0.5 * 0.02, abs=1e-15)
    assert abs(rep.total - rep.recompute_total()) <= 1e-12
    assert rep.stage_weights == (1.0, 1.0)
    explicit = total_loss([0.3, 0.2], LossWeights(stage_weights=(1, 1)), 0.1, 0.05, 0.02)
    assert explicit.total == rep.total


def test_total_pure_photometric_and_linear():
    w0 = LossWeights(alpha_sm=0, alpha_pc=0, alpha_lc=0)
    assert total_loss([0.3], w0, 5.0, 5.0, 5.0).total == 0.3
    f = lambda a: total_loss([0.3, 0.1], LossWeights(alpha_pc=a), 0.2, 0.7, 0.4).total
    assert f(3.0) - f(1.0) == pytest.approx(2 * (f(2.0) - f(1.0)), abs=1e-14)


def test_total_beta_and_weight_mismatch():
    rep = total_loss([0.3, 0.2, 0.1], LossWeights(beta=0.5))
    assert rep.stage_weights == (1.0, 0.5, 0.5)
    with pytest.raises(ContractViolation):
        stage_weights_for(2, LossWeights(stage_weights=(1, 1, 1)))
    with pytest.raises(ContractViolation):
        total_loss([])
    with pytest.raises(ContractViolation):
        LossWeights(beta=-1)


def test_total_carries_components():
    x, y = pair(14)
    r = photometric_loss(x, y)
    rep = total_loss([r])
    assert rep.l_ssim == (r.ssim_part,) and rep.l1 == (r.l1_part,)
    d = rep.to_dict()
    assert d["total"] == rep.total and LossWeights.from_dict(d["weights"]) == rep.weights

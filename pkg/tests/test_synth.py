import numpy as np
import pytest

from photoloss import synth
from photoloss.errors import ContractViolation
from photoloss.geometry import RigidPose, coeffs_to_inverse_depth, reproject, synthesize_view
from photoloss.imaging import DepthMap, window_stats, window_support_mask
from photoloss.losses import photometric_loss
from photoloss.ssim import SsimConfig, ssim_map


def warp_loss(spec, T, target=0, source=1):
    rt, rs = synth.render(spec, target), synth.render(spec, source)
    img, m = synthesize_view(rs.image, reproject(None, rt.depth, T, spec.intrinsics))
    return photometric_loss(rt.image, img, window_support_mask(m), ssim_cfg=SsimConfig(k=1.0)).loss


def test_fronto_plane_depth_and_coeffs():
    spec = synth.fronto_parallel_scene(2.0)
    r = synth.render(spec)
    assert np.all(r.depth.data == 2.0) and r.depth.valid.all()
    assert np.all(r.coeffs.data == np.array([0.0, 0.0, 0.5]))
    assert np.all(r.labels == 1)


@pytest.mark.parametrize("make", [synth.room_scene, synth.wall_and_texture_scene, synth.fronto_parallel_scene])
def test_depth_consistent_with_coeffs(make):
    spec = make()
    for i in range(len(spec.poses)):
        r = synth.render(spec, i)
        inv = coeffs_to_inverse_depth(r.coeffs, spec.intrinsics)
        assert np.max(np.abs(1.0 / inv - r.depth.data) / r.depth.data) <= 1e-9


def test_tilted_planes_consistent():
    tex = synth.Texture("ramp", offset=0.3, gradient=(0.1, 0.05))
    planes = [synth.Plane((0.3, -0.2, -1.0), -3.0, tex)]
    poses = [RigidPose.identity(), RigidPose.from_axis_angle((0.05, -0.1, 0.02), (0.1, 0.0, 0.05))]
    spec = synth.SceneSpec(planes, poses, synth._default_intrinsics(40, 50), 40, 50)
    for i in range(2):
        r = synth.render(spec, i)
        inv = coeffs_to_inverse_depth(r.coeffs, spec.intrinsics)
        assert np.max(np.abs(1.0 / inv - r.depth.data) / r.depth.data) <= 1e-9


def test_two_view_warp_reproduces_target():
    for spec in (synth.fronto_parallel_scene(), synth.room_scene()):
        rt, rs = synth.render(spec, 0), synth.render(spec, 1)
        T = synth.relative_pose(spec, 0, 1)
        img, m = synthesize_view(rs.image, reproject(None, rt.depth, T, spec.intrinsics))
        assert m.mean() > 0.5
        err = np.abs(img.data - rt.image.data)[..., 0][m]
        assert np.median(err) <= 2e-3
        assert err.max() <= 0.05


def test_constant_texture_degenerate():
    spec = synth.fronto_parallel_scene(texture=synth.Texture("constant", offset=0.4))
    rt, rs = synth.render(spec, 0), synth.render(spec, 1)
    st_ = window_stats(rt.image, rt.image)
    assert np.all(st_.sigma_x2 == 0)
    T = synth.relative_pose(spec, 0, 1)
    img, m = synthesize_view(rs.image, reproject(None, rt.depth, T, spec.intrinsics))
    idx = ssim_map(rt.image, img, SsimConfig(k=1.0)).index[..., 0]
    assert np.all(idx[window_support_mask(m)] == 1.0)


def test_render_deterministic_and_round_trips():
    spec = synth.room_scene(seed=5)
    a, b = synth.render(spec, 1), synth.render(spec, 1)
    assert np.array_equal(a.image.data, b.image.data)
    c = synth.render(synth.SceneSpec.from_dict(spec.to_dict()), 1)
    assert np.array_equal(a.image.data, c.image.data) and np.array_equal(a.depth.data, c.depth.data)
    other = synth.render(synth.room_scene(seed=6), 1)
    assert not np.array_equal(a.image.data, other.image.data)


def test_color_render():
    spec = synth.fronto_parallel_scene(channels=3)
    r = synth.render(spec)
    assert r.image.shape == (96, 128, 3)


def test_render_errors():
    tex = synth.Texture()
    small = synth.Plane((0, 0, -1.0), -2.0, tex, extent=(-0.1, 0.1, -0.1, 0.1))
    spec = synth.SceneSpec([small], [RigidPose.identity()], synth._default_intrinsics(20, 20), 20, 20)
    with pytest.raises(ContractViolation):
        synth.render(spec)
    far = synth.SceneSpec([synth.Plane((0, 0, -1.0), -20.0, tex)], [RigidPose.identity()],
                          synth._default_intrinsics(20, 20), 20, 20)
    with pytest.raises(ContractViolation):
        synth.render(far)
    with pytest.raises(ContractViolation):
        synth.Texture("plaid")


def test_room_segments_lie_on_their_plane():
    spec = synth.room_scene()
    r = synth.render(spec)
    assert len(r.segments) >= 4
    for s in r.segments:
        assert r.labels[s.start] == s.plane + 1 and r.labels[s.end] == s.plane + 1
        assert synth.LineSegment.from_dict(s.to_dict()) == s


def test_perturb_zero_and_determinism():
    T = RigidPose.from_axis_angle((0.1, 0.0, 0.0), (1.0, 2.0, 3.0))
    same = synth.perturb(T, 0.0, 1, 0.0)
    assert np.array_equal(same.matrix, T.matrix)
    a, b = synth.perturb(T, 0.01, 7, 0.02), synth.perturb(T, 0.01, 7, 0.02)
    assert np.array_equal(a.matrix, b.matrix)
    dR = a.rotation @ T.rotation.T
    assert RigidPose(dR, np.zeros(3)).rotation_angle() == pytest.approx(0.01, rel=1e-9)
    d = DepthMap(np.full((4, 4), 2.0))
    assert np.array_equal(synth.perturb(d, 0.0, 3).data, d.data)
    assert np.array_equal(synth.perturb(d, 0.1, 3).data, synth.perturb(d, 0.1, 3).data)
    with pytest.raises(ContractViolation):
        synth.perturb(T, -1.0, 0)
    with pytest.raises(TypeError):
        synth.perturb("pose", 0.1, 0)


def test_loss_grows_with_pose_perturbation():
    spec = synth.fronto_parallel_scene()
    T = synth.relative_pose(spec, 0, 1)
    mags = [0.0, 0.002, 0.005, 0.01, 0.02]
    medians = []
    for mag in mags:
        losses = [warp_loss(spec, synth.perturb(T, mag, seed, mag)) for seed in range(20)]
        medians.append(float(np.median(losses)))
    assert all(b >= a for a, b in zip(medians, medians[1:]))
    assert medians[-1] > 5 * medians[0]

import math

import numpy as np
import pytest

from svdeblur import synth
from svdeblur.blurmodel import apply_blur, assemble_operator
from svdeblur.errors import InvariantViolation
from svdeblur.geometry import PlanePatch, RigidMotion, apply_homography, forward_homography, se3_log
from svdeblur.metrics import psnr

SIZE = 64


def plane(motion, texture="leaves", seed=0, size=SIZE):
    return synth.planar_scene("t", motion, size, texture, seed)


def shift(px_x, px_y=0.0, size=SIZE, depth=synth.DEPTH):
    k = depth / size
    return RigidMotion(np.eye(3), [px_x * k, px_y * k, 0.0])


def two_layer(fg_px=6.0, size=SIZE):
    """Foreground square translating over a static background."""
    cam = synth.default_camera(size)
    big = size + 2 * synth.MARGIN
    bg = synth.Layer(synth.make_texture("leaves", big, big, 1),
                     PlanePatch([0, 0, 1 / 12.0], se3_log(RigidMotion.identity()), 0))
    support = np.zeros((big, big), bool)
    lo, hi = synth.MARGIN + size // 4, synth.MARGIN + 3 * size // 4
    support[lo:hi, lo:hi] = True
    fg = synth.Layer(synth.make_texture("checker", big, big, 2),
                     PlanePatch([0, 0, 1 / 8.0], se3_log(shift(fg_px, 0, size, 8.0)), 1), support)
    return synth.SceneSpec("two", cam, size, size, [fg, bg])


def test_textures_in_range_and_seeded():
    for kind in synth.TEXTURES:
        a = synth.make_texture(kind, 40, 50, 3)
        b = synth.make_texture(kind, 40, 50, 3)
        assert a.shape == (40, 50, 3)
        assert a.min() >= 0.0 and a.max() <= 1.0
        assert np.array_equal(a, b)
        assert not np.array_equal(a, synth.make_texture(kind, 40, 50, 4))


def test_scene_validation():
    s = plane(RigidMotion.identity())
    with pytest.raises(InvariantViolation):
        synth.SceneSpec("x", s.camera, SIZE, SIZE, [])
    with pytest.raises(InvariantViolation):
        synth.SceneSpec("x", s.camera, SIZE + 2, SIZE, s.layers)
    with pytest.raises(InvariantViolation):
        synth.Layer(np.full((4, 4, 3), 1.5), s.layers[0].patch)
    dup = synth.Layer(s.layers[0].texture, s.layers[0].patch)
    with pytest.raises(InvariantViolation):
        synth.SceneSpec("x", s.camera, SIZE, SIZE, [s.layers[0], dup])


def test_render_samples_differ_from_solver_default():
    assert synth.RENDER_SAMPLES != 70
    assert plane(RigidMotion.identity()).render_samples == synth.RENDER_SAMPLES


def test_zero_motion_blurred_equals_reference():
    blurred, sharp = synth.render_blurred(plane(RigidMotion.identity()))
    assert np.array_equal(blurred, sharp)


def test_reference_is_texture_at_t0():
    s = plane(RigidMotion.identity())
    _, sharp = synth.render_blurred(s)
    m = synth.MARGIN
    assert np.allclose(sharp, s.layers[0].texture[m:m + SIZE, m:m + SIZE], atol=1e-12)


def test_cross_check_with_blur_operator():
    s = plane(shift(8.0))
    r = synth.render(s)
    side = synth.ground_truth_sidecar(s, rendering=r)
    op = assemble_operator(s.camera, s.patches, side.segmentation, s.spec)
    model = apply_blur(op, r.sharp)
    complete = op.complete.reshape(SIZE, SIZE)
    assert complete.mean() > 0.8
    assert psnr(model[complete], r.blurred[complete]) > 45.0


def test_single_layer_sidecar():
    s = plane(shift(5.0, -2.0))
    side = synth.ground_truth_sidecar(s)
    assert np.all(side.segmentation == 0)
    assert not side.occlusion.any()
    assert np.allclose(side.flow.forward, [5.0, -2.0], atol=1e-9)
    assert np.allclose(side.flow.backward, [-5.0, 2.0], atol=1e-9)


def test_flow_matches_homography_endpoints():
    yaw = RigidMotion.about_point([0, 0, 0], [0, math.radians(3.0), 0])
    s = plane(yaw)
    side = synth.ground_truth_sidecar(s)
    G = forward_homography(s.camera, s.patches[0], 1.0)
    ys, xs = np.mgrid[0:SIZE, 0:SIZE].astype(float)
    u, v, w = apply_homography(G, xs, ys)
    assert np.all(w > 0)
    assert np.max(np.abs(side.flow.forward[..., 0] - (u - xs))) < 1e-6
    assert np.max(np.abs(side.flow.forward[..., 1] - (v - ys))) < 1e-6
    # yaw bends trajectories: forward and backward displacements are not opposite
    assert np.max(np.abs(side.flow.forward + side.flow.backward)) > 0.05


def test_two_layer_band_width_and_mask_soundness():
    s = two_layer(6.0)
    r = synth.render(s)
    side = synth.ground_truth_sidecar(s, rendering=r)
    assert set(np.unique(side.segmentation)) == {0, 1}
    # mixed pixels on one row through the square: a band at each vertical edge
    row = r.mixed[SIZE // 2]
    runs = np.diff(np.flatnonzero(np.diff(np.r_[0, row.astype(int), 0])))[::2]
    assert len(runs) == 2
    for width in runs:
        assert abs(width - 6.0) <= 2.0
    assert np.array_equal(side.occlusion, r.mixed)
    assert not r.mixed[:SIZE // 4 - 2].any()


def test_noise_is_seeded_and_clamped():
    s = plane(shift(3.0))
    s.noise_sigma, s.noise_seed = 0.05, 9
    a, _ = synth.render_blurred(s)
    b, _ = synth.render_blurred(s)
    clean = synth.render(s).blurred
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1
    assert 0.03 < np.std(a - clean) < 0.06


def test_render_worker_count_invariant():
    s = two_layer(5.0)
    a = synth.render(s, workers=1)
    b = synth.render(s, workers=3)
    assert np.array_equal(a.blurred, b.blurred)
    assert np.array_equal(a.mixed, b.mixed)


def test_standard_suite_composition():
    suite = synth.standard_suite()
    assert len(suite) >= 8
    names = [s.name for s in suite]
    for required in ("upward", "forward", "forward+yaw", "forward+roll", "yaw", "lateral+pitch",
                     "squares", "triplane"):
        assert required in names
    for s in suite:
        assert 128 <= s.width <= 256 and s.width == s.height
        assert s.spec.duty_cycle == 1.0
    by_name = {s.name: s for s in suite}
    assert by_name["upward"].fronto_parallel and by_name["squares"].fronto_parallel
    assert not by_name["forward+yaw"].fronto_parallel
    tw = by_name["forward+yaw"].patches[0].motion
    assert tw.theta > 0
    axis = tw.rotvec / np.linalg.norm(tw.rotvec)
    assert abs(axis[1]) > 0.99
    assert len(by_name["squares"].layers) >= 2 and len(by_name["triplane"].layers) >= 2


def test_forward_scene_peripheral_speed():
    s = synth.make_scene("forward")
    side = synth.ground_truth_sidecar(s)
    speed = np.hypot(*np.moveaxis(side.flow.forward, -1, 0))
    n = s.width
    periphery = np.r_[speed[0, :], speed[-1, :], speed[:, 0], speed[:, -1]]
    assert 4.0 <= periphery.min() and periphery.max() <= 10.0
    assert speed[n // 2, n // 2] < 0.5


def test_suite_scales_with_size():
    small = synth.ground_truth_sidecar(synth.make_scene("upward", 128)).flow.forward
    large = synth.ground_truth_sidecar(synth.make_scene("upward", 256)).flow.forward
    assert np.allclose(large[0, 0], 2 * small[0, 0], atol=1e-9)


def test_unknown_scene():
    with pytest.raises(KeyError):
        synth.make_scene("sideways")

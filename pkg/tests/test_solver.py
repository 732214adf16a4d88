import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svdeblur.blurmodel import BlurOperator, BlurSpec, FlowField, apply_blur, assemble_flow_operator
from svdeblur.errors import DimensionMismatch, InvariantViolation
from svdeblur.solver import (
    SolverConfig,
    TraceRecord,
    deblur,
    gradient,
    gradient_transpose,
    init_weights,
    inner_energy,
    irls_prior_weights,
    solve_inner,
    update_boundary_weights,
)


def rand_image(rng, h=16, w=16, c=3):
    return rng.uniform(0.1, 0.9, size=(h, w, c))


def shift_operator(size=24, dx=4.0):
    flow = FlowField.constant(size, size, (dx / 2, 0.0))
    return assemble_flow_operator(flow, BlurSpec())


def blocks(size=24, seed=0):
    """Piecewise-constant test image (the prior's favourite kind)."""
    rng = np.random.default_rng(seed)
    img = np.empty((size, size, 3))
    cells = rng.uniform(0.1, 0.9, size=(size // 6 + 1, size // 6 + 1, 3))
    for y in range(size):
        for x in range(size):
            img[y, x] = cells[y // 6, x // 6]
    return img


# config and trace -----------------------------------------------------------

def test_config_defaults():
    cfg = SolverConfig()
    assert cfg.alpha == 0.001
    assert cfg.k_sigma == pytest.approx(4000 / 3)
    assert cfg.epsilon == 0.01
    assert cfg.prior_exponent == 0.8
    assert (cfg.outer_iterations, cfg.cg_iterations, cfg.n_samples) == (10, 25, 70)


@pytest.mark.parametrize("field,value", [
    ("alpha", 0.0), ("k_sigma", -1.0), ("epsilon", 0.0), ("epsilon", 1.0),
    ("prior_exponent", 0.0), ("prior_exponent", 2.0), ("outer_iterations", 0), ("cg_iterations", 0),
])
def test_config_rejects(field, value):
    with pytest.raises(InvariantViolation):
        SolverConfig(**{field: value})


def test_trace_round_trip():
    records = [TraceRecord(2, 7, 1.2345678901234567), TraceRecord(2, TraceRecord.END, 0.5, 3e-4)]
    for r in records:
        back = TraceRecord.parse(r.format())
        assert back.outer == r.outer and back.step == r.step
        assert back.energy == r.energy
        assert (math.isnan(back.weight_change) and math.isnan(r.weight_change)) or back.weight_change == r.weight_change
    assert "cg=end" in records[1].format()
    assert records[1].closes_round and not records[0].closes_round


# weights ----------------------------------------------------------------------

def test_boundary_weights_exact_fit_is_one():
    rng = np.random.default_rng(0)
    I = rand_image(rng)
    op = BlurOperator.identity(16, 16)
    w = update_boundary_weights(I, op, I)
    assert np.all(w == 1.0)


@pytest.mark.parametrize("residual,expected", [(0.05, 4.54e-5), (0.01, 0.670)])
def test_boundary_weights_examples(residual, expected):
    I = np.full((4, 4, 3), 0.5)
    B = I + residual
    w = update_boundary_weights(B, BlurOperator.identity(4, 4), I)
    assert np.allclose(w, math.exp(-(4000 / 3) * 3 * residual ** 2))
    assert w[0, 0] == pytest.approx(expected, rel=2e-3)


def test_boundary_weights_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        update_boundary_weights(np.zeros((4, 4, 3)), BlurOperator.identity(5, 5), np.zeros((4, 4, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_boundary_weights_bounded(seed):
    rng = np.random.default_rng(seed)
    B, I = rand_image(rng, 8, 8), rng.normal(0.5, 2.0, size=(8, 8, 3))
    w = update_boundary_weights(B, BlurOperator.identity(8, 8), I)
    assert np.all(w >= 0.0) and np.all(w <= 1.0)


def test_init_weights():
    assert np.all(init_weights(np.zeros((3, 5), bool)) == 1.0)
    assert np.all(init_weights(np.ones((3, 5), bool)) == 0.0)
    m = np.zeros((4, 4), bool)
    m[1, 2] = True
    w = init_weights(m)
    assert w[1, 2] == 0.0 and w.sum() == 15.0
    with pytest.raises(DimensionMismatch):
        init_weights(np.zeros(4))


@pytest.mark.parametrize("c,expected", [(1.0, 1.0), (0.0, 251.19), (0.1, 15.85), (-0.1, 15.85)])
def test_irls_weights(c, expected):
    rho = irls_prior_weights(np.array([c]))
    assert rho[0] == pytest.approx(expected, rel=1e-4)


def test_irls_weights_reject_nonfinite():
    with pytest.raises(InvariantViolation):
        irls_prior_weights(np.array([np.nan]))


# gradient ---------------------------------------------------------------------

def test_gradient_constant_is_zero():
    assert np.all(gradient(np.full((5, 6, 3), 0.3)) == 0.0)


def test_gradient_ramp():
    W = 8
    img = np.tile(np.arange(W) / W, (5, 1))
    g = gradient(img)
    assert g.shape == (5, W, 1, 2)
    assert np.allclose(g[:, :-1, 0, 0], 1 / W)
    assert np.all(g[:, -1, 0, 0] == 0.0)
    assert np.all(g[..., 1] == 0.0)


def test_gradient_adjoint():
    rng = np.random.default_rng(3)
    u = rng.normal(size=(8, 8, 3))
    p = rng.normal(size=(8, 8, 3, 2))
    assert np.sum(gradient(u) * p) == pytest.approx(np.sum(u * gradient_transpose(p)), abs=1e-10)


# inner solve --------------------------------------------------------------------

def test_inner_identity_small_alpha_returns_blurred():
    rng = np.random.default_rng(4)
    B = rand_image(rng)
    cfg = SolverConfig(alpha=1e-12)
    rho = irls_prior_weights(gradient(B), cfg)
    out = solve_inner(B, BlurOperator.identity(16, 16), np.ones((16, 16)), rho, cfg, initial=np.zeros_like(B))
    assert np.max(np.abs(out - B)) < 1e-6


def test_inner_zero_weights_smooths_toward_mean():
    rng = np.random.default_rng(5)
    B = rand_image(rng)
    cfg = SolverConfig(cg_iterations=200)
    rho = np.ones(B.shape + (2,))
    out = solve_inner(B, BlurOperator.identity(16, 16), np.zeros((16, 16)), rho, cfg)
    # the prior alone only moves mass between neighbours: the mean is kept
    assert np.allclose(out.mean(axis=(0, 1)), B.mean(axis=(0, 1)), atol=1e-10)
    assert out.std(axis=(0, 1)).max() < 0.05 * B.std(axis=(0, 1)).min()


def test_inner_energy_monotone_with_blur():
    B = apply_blur(shift_operator(), blocks())
    op = shift_operator()
    cfg = SolverConfig()
    rho = irls_prior_weights(gradient(B), cfg)
    trace = []
    out = solve_inner(B, op, np.ones((24, 24)), rho, cfg, trace=trace)
    energies = [r.energy for r in trace]
    assert len(energies) == cfg.cg_iterations + 1
    for a, b in zip(energies, energies[1:]):
        assert b <= a * (1 + 1e-8)
    assert energies[-1] < energies[0]
    # the running energy is the true energy of the returned image
    assert inner_energy(B, op, np.ones((24, 24)), rho, out, cfg) == pytest.approx(energies[-1], rel=1e-9)


def test_inner_fixed_point_of_exact_data():
    I = blocks()
    op = shift_operator()
    B = apply_blur(op, I)
    cfg = SolverConfig(alpha=1e-12, cg_iterations=5)
    rho = irls_prior_weights(gradient(I), cfg)
    out = solve_inner(B, op, np.ones((24, 24)), rho, cfg, initial=I)
    assert np.max(np.abs(out - I)) < 1e-6


def test_inner_rejects_bad_shapes():
    B = np.zeros((4, 4, 3))
    op = BlurOperator.identity(4, 4)
    with pytest.raises(DimensionMismatch):
        solve_inner(B, op, np.ones((3, 4)), np.ones((4, 4, 3, 2)))
    with pytest.raises(DimensionMismatch):
        solve_inner(B, op, np.ones((4, 4)), np.ones((4, 4, 3)))


# outer loop ---------------------------------------------------------------------

def test_deblur_identity_is_nearly_input():
    B = blocks(24, seed=2)
    cfg = SolverConfig()
    out, w = deblur(B, BlurOperator.identity(24, 24), cfg=cfg)
    # the prior pulls each pixel by about alpha * |c|^(p - 1) per neighbour
    assert np.mean(np.abs(out - B)) < 1e-3
    assert np.max(np.abs(out - B)) < 5 * cfg.alpha
    assert w.shape == (24, 24) and np.all((w > 0.9) & (w <= 1))


def test_deblur_improves_blurred_blocks():
    I = blocks(48, seed=1)
    op = shift_operator(48, 6.0)
    B = apply_blur(op, I)
    out, _ = deblur(B, op)
    inner = (slice(8, -8), slice(8, -8))
    err_in = np.mean((B[inner] - I[inner]) ** 2)
    err_out = np.mean((out[inner] - I[inner]) ** 2)
    assert 10 * math.log10(err_in / err_out) > 3.0


def test_deblur_without_boundary_weights_keeps_ones():
    rng = np.random.default_rng(7)
    B = rand_image(rng)
    mask = np.ones((16, 16), bool)
    trace = []
    _, w = deblur(B, BlurOperator.identity(16, 16), mask, boundary_weights=False, trace=trace)
    assert np.all(w == 1.0)
    ends = [r for r in trace if r.closes_round]
    assert len(ends) == 10 and all(r.weight_change == 0.0 for r in ends)


def test_deblur_output_clamped_and_deterministic():
    I = blocks()
    op = shift_operator()
    B = np.clip(apply_blur(op, I) * 1.3 - 0.1, 0, 1)
    a, wa = deblur(B, op, workers=1)
    b, wb = deblur(B, op, workers=3)
    assert a.min() >= 0.0 and a.max() <= 1.0
    assert np.array_equal(a, b) and np.array_equal(wa, wb)


def test_deblur_trace_layout():
    I = blocks()
    op = shift_operator()
    trace = []
    cfg = SolverConfig(outer_iterations=3, cg_iterations=4)
    deblur(apply_blur(op, I), op, cfg=cfg, trace=trace)
    assert len(trace) == 3 * (4 + 2)
    assert [r.outer for r in trace if r.closes_round] == [1, 2, 3]
    assert all(r.weight_change >= 0 for r in trace if r.closes_round)


def synth_run(name):
    from svdeblur import synth
    from svdeblur.blurmodel import assemble_operator
    scene = synth.make_scene(name, 128)
    r = synth.render(scene)
    side = synth.ground_truth_sidecar(scene, rendering=r)
    op = assemble_operator(scene.camera, scene.patches, side.segmentation, scene.spec)
    out, w = deblur(r.blurred, op, side.occlusion)
    return r, op, out, w


def mse_db(a, b):
    return 10 * math.log10(1.0 / np.mean((a - b) ** 2))


def test_deblur_planar_translation_scene():
    r, _, out, _ = synth_run("upward")
    assert mse_db(out, r.sharp) > mse_db(r.blurred, r.sharp) + 3.0


def test_deblur_weights_drop_along_motion_boundary():
    r, op, _, w = synth_run("squares")
    inside = ~r.mixed & op.complete.reshape(w.shape)
    assert np.median(w[r.mixed]) < 0.1
    assert np.median(w[inside]) > 0.9


def test_square_prior_option_scales_prior_term():
    rng = np.random.default_rng(8)
    B = rand_image(rng, 6, 6)
    I = rand_image(rng, 6, 6)
    rho = np.full((6, 6, 3, 2), 2.0)
    op, w = BlurOperator.identity(6, 6), np.zeros((6, 6))
    plain = inner_energy(B, op, w, rho, I, SolverConfig())
    squared = inner_energy(B, op, w, rho, I, SolverConfig(square_prior_weights=True))
    assert squared == pytest.approx(2.0 * plain, rel=1e-12)

import math

import numpy as np
import pytest
import torch

from rgf.errors import ShapeError
from rgf.geometry import CameraRig, Transform2, build_sector, sector_points
from rgf.modules.attention import (
    CameraView,
    RGAttn,
    SubBevMap,
    attention_op_count,
    column_mha,
    grid_sector_inverse,
    grid_sector_sample,
    pl_process,
    rg_attn_apply,
    rg_attn_multi,
    sector_fusion,
)
from rgf.modules.tensor_ops import count_macs

F64 = torch.float64


@pytest.fixture
def block(tiny_dims, spec, generator):
    return RGAttn(tiny_dims.c1, tiny_dims.c2, spec.h1, tiny_dims.h2, heads=tiny_dims.heads, dropout=0.0, generator=generator, dtype=F64)


@pytest.fixture
def rig(tiny_dims):
    return CameraRig(Transform2.identity(), math.radians(100.0), tiny_dims.c2, tiny_dims.h2, tiny_dims.w2)


def _bev(tiny_dims, spec, generator):
    return torch.randn(tiny_dims.c1, *spec.shape, generator=generator, dtype=F64)


def _cam(tiny_dims, generator):
    return torch.randn(tiny_dims.c2, tiny_dims.h2, tiny_dims.w2, generator=generator, dtype=F64)


def test_constant_bev_samples_constant(spec):
    bev = torch.full((2, *spec.shape), 1.75, dtype=F64)
    cfg, _ = build_sector((0.0, 0.0), -1.0, 2.0, 6, 3.0, 5)
    sub = grid_sector_sample(bev, spec, cfg)
    assert sub.data.shape == (2, 5, 6)
    assert torch.allclose(sub.data, torch.full_like(sub.data, 1.75), atol=1e-12)


def test_linear_ramp_samples_exactly(spec):
    centers = torch.from_numpy(spec.cell_centers())
    bev = centers[..., 0][None].clone()
    cfg, points = build_sector((0.2, -0.1), 0.3, 2.5, 5, 3.0, 4)
    sub = grid_sector_sample(bev, spec, cfg)
    assert torch.allclose(sub.data[0], torch.from_numpy(points[..., 0]), atol=1e-12)


def test_inverse_leaves_uncovered_cells_zero(spec):
    cfg, _ = build_sector((-3.5, -3.5), 0.0, 0.3, 2, 1.0, 2)
    sub = SubBevMap(torch.ones(1, 2, 2, dtype=F64), cfg)
    out = grid_sector_inverse(sub, spec, (1, *spec.shape))
    assert out.shape == (1, *spec.shape)
    assert out[0, -1, -1] == 0.0
    assert torch.allclose(out[out != 0], torch.ones_like(out[out != 0]))


def test_inverse_rejects_mismatched_sub_map(spec):
    cfg, _ = build_sector((0.0, 0.0), 0.0, 1.0, 3, 2.0, 2)
    with pytest.raises(ShapeError):
        grid_sector_inverse(SubBevMap(torch.zeros(1, 2, 4, dtype=F64), cfg), spec, (1, *spec.shape))


def test_output_shape(tiny_dims, spec, generator, block, rig):
    bev = _bev(tiny_dims, spec, generator)
    out = rg_attn_apply(bev, spec, _cam(tiny_dims, generator), Transform2.identity(), rig, block)
    assert out.shape == bev.shape


def test_zero_value_path_is_identity(tiny_dims, spec, generator, block, rig):
    bev = _bev(tiny_dims, spec, generator)
    block.zero_value_path()
    out = rg_attn_apply(bev, spec, _cam(tiny_dims, generator), Transform2.from_yaw(0.7, (1.0, 0.5)), rig, block)
    assert torch.equal(out, bev)


def test_camera_far_away_leaves_bev_untouched(tiny_dims, spec, generator, block, rig):
    bev = _bev(tiny_dims, spec, generator)
    out = rg_attn_apply(bev, spec, _cam(tiny_dims, generator), Transform2.from_yaw(0.0, (100.0, 0.0)), rig, block)
    assert torch.equal(out, bev)


def test_matches_composition_of_stages(tiny_dims, spec, generator, block, rig):
    from rgf.modules.attention import sector_config

    bev, cam = _bev(tiny_dims, spec, generator), _cam(tiny_dims, generator)
    t = Transform2.from_yaw(-0.4, (0.5, 0.25))
    cfg = sector_config(spec, t, rig, tiny_dims.w2, block.h)
    sub = grid_sector_sample(bev, spec, cfg)
    fused = sector_fusion(sub, cam, block)
    expected = bev + grid_sector_inverse(SubBevMap(fused, cfg), spec, tuple(bev.shape))
    assert torch.equal(rg_attn_apply(bev, spec, cam, t, rig, block), expected)


def test_column_locality(tiny_dims, spec, generator, block):
    cfg, _ = build_sector((0.0, 0.0), -0.8, 1.6, tiny_dims.w2, 4.0, block.h)
    sub = SubBevMap(torch.randn(tiny_dims.c1, block.h, tiny_dims.w2, generator=generator, dtype=F64), cfg)
    cam = _cam(tiny_dims, generator)
    base = sector_fusion(sub, cam, block)
    for w in range(tiny_dims.w2):
        changed = cam.clone()
        changed[:, :, w] += 1.0
        diff = (sector_fusion(sub, changed, block) - base).abs().amax(dim=(0, 1))
        expected_col = tiny_dims.w2 - 1 - w
        assert diff[expected_col] > 1e-10
        others = [c for c in range(tiny_dims.w2) if c != expected_col]
        assert torch.allclose(diff[others], torch.zeros(len(others), dtype=F64), atol=1e-14)


def test_sector_fusion_rejects_width_mismatch(tiny_dims, generator, block):
    cfg, _ = build_sector((0.0, 0.0), -0.8, 1.6, tiny_dims.w2 + 1, 4.0, block.h)
    sub = SubBevMap(torch.zeros(tiny_dims.c1, block.h, tiny_dims.w2 + 1, dtype=F64), cfg)
    with pytest.raises(ShapeError):
        sector_fusion(sub, _cam(tiny_dims, generator), block)


def test_rejects_bev_off_grid(tiny_dims, spec, generator, block, rig):
    bev = torch.zeros(tiny_dims.c1, spec.h1 + 1, spec.w1, dtype=F64)
    with pytest.raises(ShapeError):
        rg_attn_apply(bev, spec, _cam(tiny_dims, generator), Transform2.identity(), rig, block)


def test_pl_process_shape(tiny_dims, generator, block):
    tokens = pl_process(_cam(tiny_dims, generator), "key", block)
    assert tokens.shape == (tiny_dims.w2, tiny_dims.h2, block.d_model)
    with pytest.raises(ShapeError):
        pl_process(_cam(tiny_dims, generator), "other", block)


def test_column_mha_uniform_keys_average_values(generator):
    q = torch.randn(2, 3, 4, generator=generator, dtype=F64)
    k = torch.zeros(2, 5, 4, dtype=F64)
    v = torch.randn(2, 5, 4, generator=generator, dtype=F64)
    out = column_mha(q, k, v, heads=2)
    assert torch.allclose(out, v.mean(dim=1, keepdim=True).expand(2, 3, 4), atol=1e-12)


def test_column_mha_rejects_head_mismatch():
    with pytest.raises(ShapeError):
        column_mha(torch.zeros(2, 3, 6), torch.zeros(2, 4, 6), torch.zeros(2, 4, 6), heads=4)


def test_rgattn_rejects_bad_construction():
    with pytest.raises(ShapeError):
        RGAttn(6, 3, 4, 4, heads=4)
    with pytest.raises(ShapeError):
        RGAttn(4, 3, 4, 4, heads=2, pe="sinusoid")


@pytest.mark.parametrize("pe", ["none", "learnable", "depth_height"])
def test_positional_variants_run(tiny_dims, spec, generator, rig, pe):
    block = RGAttn(tiny_dims.c1, tiny_dims.c2, spec.h1, tiny_dims.h2, heads=2, pe=pe, dropout=0.0, generator=generator, dtype=F64)
    bev = _bev(tiny_dims, spec, generator)
    out = rg_attn_apply(bev, spec, _cam(tiny_dims, generator), Transform2.identity(), rig, block)
    assert torch.isfinite(out).all()


def test_mac_count_matches_prediction(tiny_dims, spec, generator, block, rig):
    bev, cam = _bev(tiny_dims, spec, generator), _cam(tiny_dims, generator)
    with count_macs() as counter:
        rg_attn_apply(bev, spec, cam, Transform2.identity(), rig, block)
    predicted = attention_op_count(block.h, tiny_dims.h2, tiny_dims.w2, block.d_model, block.heads, tiny_dims.c1, tiny_dims.c2)
    assert counter.total == predicted


def test_op_count_linear_in_width():
    counts = [attention_op_count(64, 36, w2, 64, 8, 64, 8) for w2 in (64, 128, 256)]
    assert counts[1] == 2 * counts[0]
    assert counts[2] == 2 * counts[1]


def _views(tiny_dims, generator, n):
    views = []
    for i in range(n):
        rig = CameraRig(Transform2.from_yaw(i * math.pi / 2), math.radians(90.0), tiny_dims.c2, tiny_dims.h2, tiny_dims.w2)
        views.append(CameraView((0, i), _cam(tiny_dims, generator), Transform2.from_yaw(0.1, (0.3, 0.0)), rig))
    return views


def test_multi_with_no_cameras_is_identity(tiny_dims, spec, generator, block):
    bev = _bev(tiny_dims, spec, generator)
    assert torch.equal(rg_attn_multi(bev, spec, [], block), bev)


def test_multi_single_camera_matches_apply(tiny_dims, spec, generator, block):
    bev = _bev(tiny_dims, spec, generator)
    (view,) = _views(tiny_dims, generator, 1)
    expected = rg_attn_apply(bev, spec, view.features, view.transform, view.rig, block)
    assert torch.allclose(rg_attn_multi(bev, spec, [view], block), expected, atol=1e-14)


def test_multi_is_order_independent(tiny_dims, spec, generator, block):
    bev = _bev(tiny_dims, spec, generator)
    views = _views(tiny_dims, generator, 3)
    forward = rg_attn_multi(bev, spec, views, block)
    assert torch.equal(rg_attn_multi(bev, spec, views[::-1], block), forward)
    assert torch.equal(rg_attn_multi(bev, spec, [views[1], views[2], views[0]], block), forward)


def test_sector_points_stay_in_radius():
    cfg, _ = build_sector((1.0, 1.0), 2.0, 1.5, 8, 6.0, 9)
    offsets = sector_points(cfg) - np.array(cfg.origin)
    assert (np.linalg.norm(offsets, axis=-1) <= cfg.radius).all()


def _dense_masked_attention(q, k, v, heads):
    """All W*Hq queries against all W*Hk keys, with cross-column pairs masked out."""
    width, hq, d = q.shape
    hk = k.shape[1]
    e = d // heads
    q_cols = torch.arange(width).repeat_interleave(hq)
    k_cols = torch.arange(width).repeat_interleave(hk)
    mask = q_cols[:, None] != k_cols[None, :]
    qf, kf, vf = q.reshape(width * hq, d), k.reshape(width * hk, d), v.reshape(width * hk, d)
    out = torch.empty_like(qf)
    for m in range(heads):
        cols = slice(m * e, (m + 1) * e)
        logits = qf[:, cols] @ kf[:, cols].T / math.sqrt(e)
        logits = logits.masked_fill(mask, float("-inf"))
        out[:, cols] = torch.softmax(logits, dim=-1) @ vf[:, cols]
    return out.reshape(width, hq, d)


@pytest.mark.parametrize("seed", range(20))
def test_column_mha_matches_dense_masked_attention(seed):
    rng = np.random.default_rng(seed)
    heads = int(rng.choice([1, 2, 4]))
    d = heads * int(rng.integers(1, 16 // heads + 1))
    width, hq, hk = (int(x) for x in rng.integers(1, [5, 9, 9]))
    g = torch.Generator().manual_seed(seed)
    q = torch.randn(width, hq, d, generator=g, dtype=F64)
    k = torch.randn(width, hk, d, generator=g, dtype=F64)
    v = torch.randn(width, hk, d, generator=g, dtype=F64)
    out = column_mha(q, k, v, heads=heads)
    assert (out - _dense_masked_attention(q, k, v, heads)).abs().max() < 1e-10


def test_column_mha_single_key_returns_its_value(generator):
    q = torch.randn(3, 5, 8, generator=generator, dtype=F64)
    k = torch.randn(3, 1, 8, generator=generator, dtype=F64)
    v = torch.randn(3, 1, 8, generator=generator, dtype=F64)
    out = column_mha(q, k, v, heads=4)
    assert torch.allclose(out, v.expand(3, 5, 8), atol=1e-12)


def test_inverse_of_constant_sector_is_constant_on_covered_cells(spec):
    cfg, _ = build_sector((0.3, -0.2), -0.9, 1.8, 16, 3.5, 12)
    sub = SubBevMap(torch.full((2, 12, 16), 2.5, dtype=F64), cfg)
    out = grid_sector_inverse(sub, spec, (2, *spec.shape))
    covered = out[0] != 0
    assert covered.sum() > 10
    assert torch.allclose(out[:, covered], torch.full_like(out[:, covered], 2.5), atol=1e-6)
    assert torch.equal(out[0] != 0, out[1] != 0)


def test_sample_inverse_sample_round_trip_on_smooth_field():
    from rgf.geometry import BevSpec

    grid = BevSpec(-6.4, 6.4, -6.4, 6.4, 0.4)
    centers = grid.cell_centers()
    field = 2.0 + np.sin(centers[..., 0] / 4.0) + np.cos(centers[..., 1] / 3.0)
    bev = torch.from_numpy(field)[None]
    cfg, _ = build_sector((0.0, 0.0), -0.6, 1.2, 48, 5.5, 40)

    sampled = grid_sector_sample(bev, grid, cfg)
    back = grid_sector_inverse(sampled, grid, (1, *grid.shape))
    again = grid_sector_sample(back, grid, cfg).data
    # outermost rim rows and columns sit next to cells the sector only grazes
    interior = (slice(None), slice(0, -2), slice(2, -2))
    err = again[interior] - sampled.data[interior]
    rms = err.pow(2).mean().sqrt() / sampled.data[interior].pow(2).mean().sqrt()
    assert rms < 0.05

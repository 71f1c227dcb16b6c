import pytest
import torch

from rgf.errors import ShapeError
from rgf.modules.tensor_ops import (
    bilinear_sample_2d,
    bilinear_splat_2d,
    count_macs,
    dropout,
    linear_forward,
    softmax,
)


def test_linear_zero_input_gives_zero(generator):
    x = torch.zeros(3, 2, dtype=torch.float64)
    w = torch.randn(2, 4, generator=generator, dtype=torch.float64)
    assert torch.equal(linear_forward(x, w, torch.zeros(4, dtype=torch.float64)), torch.zeros(3, 4, dtype=torch.float64))


def test_linear_identity(generator):
    x = torch.randn(5, 3, generator=generator, dtype=torch.float64)
    assert torch.equal(linear_forward(x, torch.eye(3, dtype=torch.float64)), x)


def test_linear_matches_triple_loop(generator):
    x = torch.randn(3, 2, generator=generator, dtype=torch.float64)
    w = torch.randn(2, 4, generator=generator, dtype=torch.float64)
    b = torch.randn(4, generator=generator, dtype=torch.float64)
    expected = torch.zeros(3, 4, dtype=torch.float64)
    for n in range(3):
        for o in range(4):
            acc = b[o].item()
            for i in range(2):
                acc += x[n, i].item() * w[i, o].item()
            expected[n, o] = acc
    assert torch.allclose(linear_forward(x, w, b), expected, atol=1e-12, rtol=0)


@pytest.mark.parametrize(
    "x_shape, w_shape, b_shape",
    [((3, 2), (3, 4), (4,)), ((3, 2), (2, 4), (3,)), ((2,), (2, 4), (4,))],
)
def test_linear_rejects_bad_shapes(x_shape, w_shape, b_shape):
    with pytest.raises(ShapeError):
        linear_forward(torch.zeros(x_shape), torch.zeros(w_shape), torch.zeros(b_shape))


def test_linear_records_macs():
    with count_macs() as counter:
        linear_forward(torch.zeros(5, 3), torch.zeros(3, 7))
    assert counter.total == 5 * 3 * 7


def test_softmax_constant_slice():
    out = softmax(torch.full((2, 4), 3.0, dtype=torch.float64), axis=1)
    assert torch.allclose(out, torch.full((2, 4), 0.25, dtype=torch.float64), atol=1e-15)


def test_softmax_saturates():
    out = softmax(torch.tensor([0.0, 1000.0], dtype=torch.float64))
    assert out[0].item() < 1e-300 or out[0].item() == 0.0
    assert out[1].item() == pytest.approx(1.0, abs=1e-15)


def test_softmax_matches_formula(generator):
    x = torch.randn(5, generator=generator, dtype=torch.float64)
    expected = torch.exp(x) / torch.exp(x).sum()
    assert torch.allclose(softmax(x), expected, atol=1e-12, rtol=0)


def test_softmax_slices_sum_to_one(generator):
    x = 10 * torch.randn(4, 6, 3, generator=generator, dtype=torch.float64)
    for axis in range(3):
        sums = softmax(x, axis=axis).sum(dim=axis)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-12, rtol=0)


def test_softmax_empty_axis():
    with pytest.raises(ShapeError):
        softmax(torch.zeros(3, 0), axis=1)


def test_bilinear_sample_grid_nodes(generator):
    feature = torch.randn(2, 4, 5, generator=generator, dtype=torch.float64)
    coords = torch.tensor([[0.0, 0.0], [3.0, 4.0], [2.0, 1.0]], dtype=torch.float64)
    out = bilinear_sample_2d(feature, coords)
    assert torch.equal(out[:, 0], feature[:, 0, 0])
    assert torch.equal(out[:, 1], feature[:, 3, 4])
    assert torch.equal(out[:, 2], feature[:, 2, 1])


def test_bilinear_sample_linear_field_exact(generator):
    a, b = 0.7, -1.3
    rows = torch.arange(6, dtype=torch.float64)[:, None]
    cols = torch.arange(7, dtype=torch.float64)[None, :]
    feature = (a * rows + b * cols)[None]
    coords = torch.rand(50, 2, generator=generator, dtype=torch.float64) * torch.tensor([5.0, 6.0], dtype=torch.float64)
    out = bilinear_sample_2d(feature, coords)[0]
    assert torch.allclose(out, a * coords[:, 0] + b * coords[:, 1], atol=1e-12, rtol=0)


def test_bilinear_sample_zero_padding():
    feature = torch.ones(1, 3, 3, dtype=torch.float64)
    out = bilinear_sample_2d(feature, torch.tensor([[50.0, -20.0], [-1.0, 1.0], [-0.5, 1.0]], dtype=torch.float64))
    assert out[0, 0].item() == 0.0
    assert out[0, 1].item() == 0.0
    assert out[0, 2].item() == pytest.approx(0.5)


def test_splat_integer_coordinate():
    accum, weight = bilinear_splat_2d(torch.tensor([[2.0]], dtype=torch.float64), torch.tensor([[1.0, 2.0]], dtype=torch.float64), (3, 4))
    assert accum[0, 1, 2].item() == 2.0
    assert weight[1, 2].item() == 1.0
    assert accum.sum().item() == 2.0
    assert weight.sum().item() == 1.0


def test_splat_midpoint_quarters():
    accum, weight = bilinear_splat_2d(torch.tensor([[4.0]], dtype=torch.float64), torch.tensor([[0.5, 0.5]], dtype=torch.float64), (2, 2))
    assert torch.allclose(accum[0], torch.full((2, 2), 1.0, dtype=torch.float64))
    assert torch.allclose(weight, torch.full((2, 2), 0.25, dtype=torch.float64))


def test_splat_conserves_mass(generator):
    values = torch.randn(3, 40, generator=generator, dtype=torch.float64)
    coords = torch.rand(40, 2, generator=generator, dtype=torch.float64) * torch.tensor([4.0, 5.0], dtype=torch.float64)
    accum, weight = bilinear_splat_2d(values, coords, (5, 6))
    assert torch.allclose(accum.sum(dim=(1, 2)), values.sum(dim=1), atol=1e-10, rtol=0)
    assert weight.sum().item() == pytest.approx(40.0, abs=1e-10)


def test_splat_drops_out_of_bounds():
    accum, weight = bilinear_splat_2d(torch.ones(1, 1, dtype=torch.float64), torch.tensor([[-5.0, 9.0]], dtype=torch.float64), (3, 3))
    assert accum.abs().sum().item() == 0.0
    assert weight.abs().sum().item() == 0.0


def test_dropout_identity_outside_training(generator):
    x = torch.randn(10, generator=generator)
    assert dropout(x, 0.5, generator, training=False) is x
    assert dropout(x, 0.0, generator, training=True) is x


def test_dropout_seeded():
    x = torch.ones(1000, dtype=torch.float64)
    a = dropout(x, 0.1, torch.Generator().manual_seed(3), training=True)
    b = dropout(x, 0.1, torch.Generator().manual_seed(3), training=True)
    assert torch.equal(a, b)
    kept = a != 0
    assert torch.allclose(a[kept], torch.full_like(a[kept], 1 / 0.9))
    assert 0.8 < kept.double().mean().item() < 0.98

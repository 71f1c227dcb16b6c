"""
Dense numeric primitives shared by every fusion stage: linear maps, softmax,
bilinear sampling and its transpose (splatting), and seeded dropout.

Feature maps are laid out C x H x W. Continuous pixel coordinates are (u, v)
with u along the height axis and v along the width axis; integer coordinates
hit cell centers exactly.
"""

import contextvars
from contextlib import contextmanager

import torch

from ..errors import ShapeError


_MAC_COUNTER = contextvars.ContextVar("rgf_mac_counter", default=None)


class MacCounter:
    """Multiply-accumulate tally keyed by operation name."""

    def __init__(self):
        self.counts = {}

    def add(self, name, macs):
        self.counts[name] = self.counts.get(name, 0) + int(macs)

    @property
    def total(self):
        return sum(self.counts.values())


@contextmanager
def count_macs():
    counter = MacCounter()
    token = _MAC_COUNTER.set(counter)
    try:
        yield counter
    finally:
        _MAC_COUNTER.reset(token)


def record_macs(name, macs):
    counter = _MAC_COUNTER.get()
    if counter is not None:
        counter.add(name, macs)


def linear_forward(x, w, b=None, name="linear"):
    """y[n, o] = sum_i x[n, i] * w[i, o] + b[o]."""
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError(f"linear_forward expects 2-d x and w, got {tuple(x.shape)} and {tuple(w.shape)}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear_forward: x has {x.shape[1]} features but w expects {w.shape[0]}")
    if b is not None and tuple(b.shape) != (w.shape[1],):
        raise ShapeError(f"linear_forward: bias shape {tuple(b.shape)} does not match output width {w.shape[1]}")
    record_macs(name, x.shape[0] * w.shape[0] * w.shape[1])
    y = x @ w
    if b is not None:
        y = y + b
    return y


def softmax(x, axis=-1):
    if x.ndim == 0 or x.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    # torch subtracts the slice maximum before exponentiation
    return torch.softmax(x, dim=axis)


def _corner_terms(coords, height, width):
    """
    Yields (flat_index, weight) for the four bilinear neighbours of every coordinate.
    Neighbours outside the grid get weight zero and a clamped (harmless) index.
    """
    u = coords[:, 0]
    v = coords[:, 1]
    u0 = torch.floor(u)
    v0 = torch.floor(v)
    du = u - u0
    dv = v - v0
    u0 = u0.long()
    v0 = v0.long()
    for ru, rv, wu, wv in (
        (0, 0, 1 - du, 1 - dv),
        (0, 1, 1 - du, dv),
        (1, 0, du, 1 - dv),
        (1, 1, du, dv),
    ):
        r = u0 + ru
        c = v0 + rv
        valid = (r >= 0) & (r < height) & (c >= 0) & (c < width)
        weight = wu * wv * valid.to(coords.dtype)
        flat = r.clamp(0, height - 1) * width + c.clamp(0, width - 1)
        yield flat, weight


def bilinear_sample_2d(feature, coords):
    """
    Sample a C x H x W map at continuous (u, v) coordinates with zero padding.

    Args:
        feature: tensor of shape C x H x W.
        coords: tensor of shape N x 2 holding (u, v) per sample.

    Returns:
        Tensor of shape C x N.
    """
    if feature.ndim != 3:
        raise ShapeError(f"bilinear_sample_2d expects a C x H x W map, got {tuple(feature.shape)}")
    coords = coords.reshape(-1, 2).to(feature.dtype)
    channels, height, width = feature.shape
    flat_map = feature.reshape(channels, height * width)
    out = feature.new_zeros(channels, coords.shape[0])
    for flat, weight in _corner_terms(coords, height, width):
        out = out + flat_map[:, flat] * weight
    return out


def bilinear_splat_2d(values, coords, out_shape):
    """
    Transpose of bilinear_sample_2d: distribute each value onto its four neighbours.

    Args:
        values: tensor of shape C x N.
        coords: tensor of shape N x 2 of (u, v).
        out_shape: (H, W) of the target grid.

    Returns:
        (accum C x H x W, weight H x W). Contributions falling outside the grid are dropped.
    """
    height, width = out_shape
    coords = coords.reshape(-1, 2).to(values.dtype)
    if values.ndim != 2 or values.shape[1] != coords.shape[0]:
        raise ShapeError(f"bilinear_splat_2d: values {tuple(values.shape)} do not match {coords.shape[0]} coords")
    channels = values.shape[0]
    accum = values.new_zeros(channels, height * width)
    weight_map = values.new_zeros(height * width)
    for flat, weight in _corner_terms(coords, height, width):
        accum = accum.index_add(1, flat, values * weight)
        weight_map = weight_map.index_add(0, flat, weight)
    return accum.reshape(channels, height, width), weight_map.reshape(height, width)


def dropout(x, rate, generator=None, training=False):
    """Inverted dropout; identity at inference or when rate == 0."""
    if not training or rate <= 0.0:
        return x
    if rate >= 1.0:
        return torch.zeros_like(x)
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= rate
    return x * keep.to(x.dtype) / (1.0 - rate)

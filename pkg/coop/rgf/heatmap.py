import logging

import imageio.v3 as iio
import numpy as np

from .errors import ShapeError


logpy = logging.getLogger(__name__)

CONSTANT_GRAY = 128


def channel_to_gray(tensor, channel):
    """Min-max normalise one channel of a C x H x W tensor to uint8; a constant channel becomes mid-gray."""
    if tensor.ndim != 3:
        raise ShapeError(f"heatmaps need a C x H x W tensor, got shape {tuple(tensor.shape)}")
    if not 0 <= channel < tensor.shape[0]:
        raise ShapeError(f"channel {channel} out of range for {tensor.shape[0]} channels")
    values = tensor[channel].detach().to("cpu").double().numpy()
    lo, hi = float(values.min()), float(values.max())
    if hi - lo <= 0.0:
        return np.full(values.shape, CONSTANT_GRAY, dtype=np.uint8)
    scaled = np.round((values - lo) / (hi - lo) * 255.0)
    return scaled.astype(np.uint8)


def write_heatmap(tensor, channel, path):
    image = channel_to_gray(tensor, channel)
    iio.imwrite(path, image, extension=".pgm")
    logpy.info(f"wrote channel {channel} heatmap {image.shape[1]}x{image.shape[0]} to {path}")
    return image


def read_heatmap(path):
    return np.asarray(iio.imread(path, extension=".pgm"))

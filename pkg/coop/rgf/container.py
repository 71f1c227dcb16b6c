"""
RGTN binary tensor container.

Layout (little-endian):

    offset  size      field
    0       4         magic b"RGTN"
    4       2         version (u16, currently 1)
    6       1         dtype code (u8): 0 = f32, 1 = f16, 2 = f64
    7       1         rank (u8)
    8       4 * rank  extents (u32 each)
    ...               row-major payload, product(extents) * itemsize bytes
"""

import struct
from pathlib import Path

import numpy as np
import torch

from .errors import PayloadError


MAGIC = b"RGTN"
VERSION = 1
HEADER = struct.Struct("<4sHBB")
DTYPE_CODES = {"f32": 0, "f16": 1, "f64": 2}
NUMPY_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f2"), 2: np.dtype("<f8")}
TORCH_DTYPES = {0: torch.float32, 1: torch.float16, 2: torch.float64}


def dtype_code(tensor_or_name):
    if isinstance(tensor_or_name, str):
        if tensor_or_name not in DTYPE_CODES:
            raise PayloadError(f"unsupported precision {tensor_or_name!r}, expected one of {sorted(DTYPE_CODES)}")
        return DTYPE_CODES[tensor_or_name]
    for code, dtype in TORCH_DTYPES.items():
        if tensor_or_name.dtype == dtype:
            return code
    raise PayloadError(f"unsupported tensor dtype {tensor_or_name.dtype}")


def header_size(rank):
    return HEADER.size + 4 * rank


def container_size(shape, precision="f32"):
    itemsize = NUMPY_DTYPES[dtype_code(precision)].itemsize
    return header_size(len(shape)) + int(np.prod(shape, dtype=np.int64)) * itemsize


def encode_tensor(tensor, precision=None):
    """Serialize a tensor; `precision` converts it first (defaults to the tensor's own dtype)."""
    code = dtype_code(tensor) if precision is None else dtype_code(precision)
    shape = tuple(tensor.shape)
    if len(shape) > 255 or any(s >= 2**32 for s in shape):
        raise PayloadError(f"shape {shape} cannot be stored in a container")
    array = tensor.detach().cpu().numpy().astype(NUMPY_DTYPES[code], copy=False)
    header = HEADER.pack(MAGIC, VERSION, code, len(shape)) + struct.pack(f"<{len(shape)}I", *shape)
    return header + np.ascontiguousarray(array).tobytes()


def decode_header(data):
    """Returns (dtype code, shape, payload offset)."""
    if len(data) < HEADER.size:
        raise PayloadError(f"container truncated: {len(data)} bytes")
    magic, version, code, rank = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise PayloadError(f"bad container magic {magic!r}")
    if version != VERSION:
        raise PayloadError(f"unsupported container version {version}")
    if code not in NUMPY_DTYPES:
        raise PayloadError(f"unknown dtype code {code}")
    if len(data) < header_size(rank):
        raise PayloadError("container truncated inside the extents")
    shape = struct.unpack_from(f"<{rank}I", data, HEADER.size)
    return code, tuple(shape), header_size(rank)


def decode_tensor(data):
    code, shape, offset = decode_header(data)
    expected = offset + int(np.prod(shape, dtype=np.int64)) * NUMPY_DTYPES[code].itemsize
    if len(data) != expected:
        raise PayloadError(f"container length {len(data)} does not match header ({expected} bytes)")
    array = np.frombuffer(data, dtype=NUMPY_DTYPES[code], offset=offset).reshape(shape)
    return torch.from_numpy(array.copy())


def save_tensor(path, tensor, precision=None):
    Path(path).write_bytes(encode_tensor(tensor, precision))


def load_tensor(path):
    return decode_tensor(Path(path).read_bytes())

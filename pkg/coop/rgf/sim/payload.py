"""
V2X message codec.

A message is a fixed little-endian header followed by the body. The body is an
RGTN container (see `rgf.container`) at the chosen precision, optionally DEFLATE
compressed with zlib. Header layout:

    offset  size  field
    0       4     magic b"V2XM"
    4       2     version (u16)
    6       4     agent_id (u32)
    10      4     frame_id (u32)
    14      8     pose x (f64)
    22      8     pose y (f64)
    30      8     pose yaw (f64)
    38      1     payload kind (u8): 0 = bev_feature, 1 = camera_feature
    39      1     rig index (i8), -1 for BEV payloads
    40      1     dtype code (u8), as in the container
    41      1     compressed flag (u8)
    42      1     rank (u8)
    43      4*r   extents (u32 each)
    ...     4     body length in bytes (u32)
"""

import logging
import struct
import zlib
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import torch

from .. import container
from ..errors import PayloadError
from ..geometry import Pose2


logpy = logging.getLogger(__name__)

MAGIC = b"V2XM"
VERSION = 1
FIXED = struct.Struct("<4sHIIdddBbBBB")
BODY_LEN = struct.Struct("<I")
PAYLOAD_KINDS = {"bev_feature": 0, "camera_feature": 1}
ZLIB_LEVEL = 6


@dataclass(frozen=True)
class PayloadStats:
    raw_bytes: int
    sent_bytes: int

    @property
    def compression_ratio(self):
        return 1.0 - self.sent_bytes / self.raw_bytes

    def to_dict(self):
        return {"raw_bytes": self.raw_bytes, "sent_bytes": self.sent_bytes, "compression_ratio": self.compression_ratio}


@dataclass(frozen=True)
class V2XMessage:
    agent_id: int
    frame_id: int
    pose: Pose2
    payload_kind: str
    rig_index: int
    shape: Tuple[int, ...]
    dtype_code: int
    compressed: bool
    body: bytes

    @property
    def body_len(self):
        return len(self.body)

    def header_bytes(self, body_len=None):
        fixed = FIXED.pack(
            MAGIC,
            VERSION,
            self.agent_id,
            self.frame_id,
            self.pose.x,
            self.pose.y,
            self.pose.yaw,
            PAYLOAD_KINDS[self.payload_kind],
            self.rig_index,
            self.dtype_code,
            int(self.compressed),
            len(self.shape),
        )
        extents = struct.pack(f"<{len(self.shape)}I", *self.shape)
        return fixed + extents + BODY_LEN.pack(self.body_len if body_len is None else body_len)

    def to_bytes(self):
        return self.header_bytes() + self.body

    @classmethod
    def from_bytes(cls, data):
        if len(data) < FIXED.size:
            raise PayloadError(f"message truncated: {len(data)} bytes")
        magic, version, agent_id, frame_id, x, y, yaw, kind, rig_index, code, compressed, rank = FIXED.unpack_from(data)
        if magic != MAGIC or version != VERSION:
            raise PayloadError(f"bad message magic/version {magic!r}/{version}")
        kinds = {v: k for k, v in PAYLOAD_KINDS.items()}
        if kind not in kinds:
            raise PayloadError(f"unknown payload kind {kind}")
        offset = FIXED.size + 4 * rank
        if len(data) < offset + BODY_LEN.size:
            raise PayloadError("message truncated inside the header")
        shape = struct.unpack_from(f"<{rank}I", data, FIXED.size)
        (body_len,) = BODY_LEN.unpack_from(data, offset)
        body = data[offset + BODY_LEN.size :]
        if len(body) != body_len:
            raise PayloadError(f"body length mismatch: header says {body_len}, got {len(body)}")
        return cls(agent_id, frame_id, Pose2(x, y, yaw), kinds[kind], rig_index, tuple(shape), code, bool(compressed), bytes(body))


def truncate_channels(tensor, factor=32):
    """Keep the first C // factor channels (at least one) of a C x H x W feature."""
    keep = max(1, tensor.shape[0] // factor)
    return tensor[:keep]


def encode_payload(
    tensor,
    kind="bev_feature",
    precision="f16",
    compress=True,
    agent_id=0,
    frame_id=0,
    pose=None,
    rig_index=-1,
):
    """
    Serialize a feature tensor into a message.

    When compression would not shrink the container the body is sent uncompressed
    and the flag is cleared, so the reported ratio is never negative.
    """
    if kind not in PAYLOAD_KINDS:
        raise PayloadError(f"unknown payload kind {kind!r}")
    if not torch.isfinite(tensor).all():
        raise PayloadError("refusing to encode a tensor with non-finite values")
    raw = container.encode_tensor(tensor, precision)
    body, compressed = raw, False
    if compress:
        packed = zlib.compress(raw, ZLIB_LEVEL)
        if len(packed) < len(raw):
            body, compressed = packed, True
    message = V2XMessage(
        agent_id=int(agent_id),
        frame_id=int(frame_id),
        pose=pose or Pose2(),
        payload_kind=kind,
        rig_index=int(rig_index) if kind == "camera_feature" else -1,
        shape=tuple(int(s) for s in tensor.shape),
        dtype_code=container.dtype_code(precision),
        compressed=compressed,
        body=body,
    )
    stats = PayloadStats(raw_bytes=len(raw), sent_bytes=len(body))
    logpy.debug(f"{kind} {message.shape} {precision}: {stats.raw_bytes} -> {stats.sent_bytes} bytes")
    return message, stats


def decode_payload(message: V2XMessage):
    raw = message.body
    if message.compressed:
        try:
            raw = zlib.decompress(raw)
        except zlib.error as e:
            raise PayloadError(f"corrupt compressed body: {e}") from e
    code, shape, _ = container.decode_header(raw)
    if code != message.dtype_code or tuple(shape) != tuple(message.shape):
        raise PayloadError(f"container {shape}/{code} disagrees with header {message.shape}/{message.dtype_code}")
    return container.decode_tensor(raw)


def tensor_bytes(shape, precision):
    return int(np.prod(shape, dtype=np.int64)) * container.NUMPY_DTYPES[container.dtype_code(precision)].itemsize

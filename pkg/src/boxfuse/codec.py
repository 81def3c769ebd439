"""Box-level message codec.

Each detection is reduced to six fields ``(x, y, w, l, yaw, score)``, each
quantized with a b-bit zero-point quantizer. A message always carries exactly
``k_max`` records; unused slots are all-zero codes. The wire format has no
header, so its size depends only on ``k_max`` and the bit width.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DecodeError
from .geometry import BoxBEV, wrap_angle

FIELD_NAMES = ("x", "y", "w", "l", "yaw", "score")
W_FIELD, L_FIELD, SCORE_FIELD = 2, 3, 5
SUPPORTED_BITS = (4, 8, 16, 32)


def round_half_away(v: float) -> int:
    """Round to nearest integer, ties away from zero."""
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


@dataclass(frozen=True)
class FieldSpec:
    """Quantizer for one scalar field. ``bits == 32`` stores raw float32."""

    v_min: float
    v_max: float
    bits: int = 8

    def __post_init__(self):
        if self.bits not in SUPPORTED_BITS:
            raise ConfigError(f"unsupported bit width {self.bits}")
        if not self.v_max > self.v_min:
            raise ConfigError(f"field range must satisfy v_max > v_min, got [{self.v_min}, {self.v_max}]")

    @property
    def passthrough(self) -> bool:
        return self.bits == 32

    @property
    def q_min(self) -> int:
        return 0

    @property
    def q_max(self) -> int:
        return (1 << self.bits) - 1

    @property
    def scale(self) -> float:
        return (self.v_max - self.v_min) / (self.q_max - self.q_min)

    @property
    def zero_point(self) -> int:
        return round_half_away(self.q_min - self.v_min / self.scale)

    def with_bits(self, bits: int) -> FieldSpec:
        return FieldSpec(self.v_min, self.v_max, bits)


def quantize_field(v: float, f: FieldSpec) -> int:
    if f.passthrough:
        return struct.unpack("<I", struct.pack("<f", v))[0]
    code = round_half_away(v / f.scale) + f.zero_point
    return min(max(code, f.q_min), f.q_max)


def dequantize_field(code: int, f: FieldSpec) -> float:
    if not f.q_min <= code <= f.q_max:
        raise DecodeError(f"code {code} outside [{f.q_min}, {f.q_max}]")
    if f.passthrough:
        return struct.unpack("<f", struct.pack("<I", code))[0]
    return f.scale * (code - f.zero_point)


# default extents: w, l steps of 0.05 m / 0.1 m at 8 bits
W_RANGE = (0.0, 12.75)
L_RANGE = (0.0, 25.5)
YAW_RANGE = (-math.pi, math.pi)
SCORE_RANGE = (0.0, 1.0)


@dataclass(frozen=True)
class MessageSchema:
    fields: tuple[FieldSpec, ...]
    k_max: int = 20

    def __post_init__(self):
        if len(self.fields) != 6:
            raise ConfigError("a message schema needs exactly six fields")
        if self.k_max < 0:
            raise ConfigError("k_max must be >= 0")

    @classmethod
    def for_range(
        cls,
        x_range: tuple[float, float],
        y_range: tuple[float, float],
        bits: int = 8,
        k_max: int = 20,
        w_range: tuple[float, float] = W_RANGE,
        l_range: tuple[float, float] = L_RANGE,
        yaw_range: tuple[float, float] = YAW_RANGE,
        score_range: tuple[float, float] = SCORE_RANGE,
    ) -> MessageSchema:
        ranges = (x_range, y_range, w_range, l_range, yaw_range, score_range)
        return cls(tuple(FieldSpec(lo, hi, bits) for lo, hi in ranges), k_max)

    @property
    def bits(self) -> int:
        """The common bit width; raises if fields disagree."""
        widths = {f.bits for f in self.fields}
        if len(widths) != 1:
            raise ConfigError(f"non-uniform bit widths {sorted(widths)}")
        return widths.pop()

    @property
    def record_bits(self) -> int:
        return sum(f.bits for f in self.fields)

    @property
    def payload_bits(self) -> int:
        return self.k_max * self.record_bits

    @property
    def payload_bytes(self) -> int:
        return math.ceil(self.payload_bits / 8)

    def with_bits(self, bits: int) -> MessageSchema:
        return MessageSchema(tuple(f.with_bits(bits) for f in self.fields), self.k_max)

    def with_k_max(self, k_max: int) -> MessageSchema:
        return MessageSchema(self.fields, k_max)


@dataclass(frozen=True)
class BoxMessage:
    """``k_max`` records of six integer codes, best-scoring first."""

    codes: np.ndarray = field(repr=False)
    schema: MessageSchema

    def __post_init__(self):
        if self.codes.shape != (self.schema.k_max, 6):
            raise DecodeError(f"message codes have shape {self.codes.shape}, expected ({self.schema.k_max}, 6)")

    def __eq__(self, other):
        if not isinstance(other, BoxMessage):
            return NotImplemented
        return self.schema == other.schema and np.array_equal(self.codes, other.codes)

    __hash__ = None

    @property
    def num_boxes(self) -> int:
        return int(np.count_nonzero(~_padding_rows(self.codes)))


def _padding_rows(codes: np.ndarray) -> np.ndarray:
    return (codes[:, W_FIELD] == 0) & (codes[:, L_FIELD] == 0)


def encode_message(boxes: Sequence[BoxBEV], schema: MessageSchema) -> BoxMessage:
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].score, i))[: schema.k_max]
    codes = np.zeros((schema.k_max, 6), dtype=np.int64)
    for row, i in enumerate(order):
        b = boxes[i]
        values = (b.x, b.y, b.w, b.l, wrap_angle(b.yaw), b.score)
        for j, (v, f) in enumerate(zip(values, schema.fields)):
            codes[row, j] = quantize_field(v, f)
    return BoxMessage(codes, schema)


def decode_message(m: BoxMessage, schema: MessageSchema | None = None) -> list[BoxBEV]:
    """Dequantize every non-padding record; a record is padding iff its w and l codes are both 0."""
    schema = schema or m.schema
    if m.codes.shape != (schema.k_max, 6):
        raise DecodeError(f"message has {m.codes.shape[0]} records, schema expects {schema.k_max}")
    boxes = []
    pad = _padding_rows(m.codes)
    for row in range(schema.k_max):
        if pad[row]:
            continue
        vals = [dequantize_field(int(c), f) for c, f in zip(m.codes[row], schema.fields)]
        boxes.append(BoxBEV(*vals))
    return boxes


def serialize(m: BoxMessage) -> bytes:
    """Records in order, fields in schema order; multi-byte codes little-endian,
    4-bit codes packed two per byte with the earlier code in the low nibble."""
    bits = m.schema.bits
    flat = m.codes.reshape(-1)
    if bits == 4:
        if flat.size % 2:
            flat = np.append(flat, 0)
        pairs = flat.reshape(-1, 2).astype(np.uint8)
        return (pairs[:, 0] | (pairs[:, 1] << 4)).astype(np.uint8).tobytes()
    dtype = {8: "<u1", 16: "<u2", 32: "<u4"}[bits]
    return flat.astype(dtype).tobytes()


def deserialize(data: bytes, schema: MessageSchema) -> BoxMessage:
    bits = schema.bits
    if len(data) != schema.payload_bytes:
        raise DecodeError(f"payload is {len(data)} bytes, schema expects {schema.payload_bytes}")
    n = schema.k_max * 6
    if bits == 4:
        raw = np.frombuffer(data, dtype=np.uint8)
        flat = np.empty(raw.size * 2, dtype=np.int64)
        flat[0::2] = raw & 0x0F
        flat[1::2] = raw >> 4
        flat = flat[:n]
    else:
        dtype = {8: "<u1", 16: "<u2", 32: "<u4"}[bits]
        flat = np.frombuffer(data, dtype=dtype).astype(np.int64)
    return BoxMessage(flat.reshape(schema.k_max, 6), schema)


def bandwidth_bps(schema: MessageSchema, rate_hz: float) -> float:
    if rate_hz <= 0:
        raise ConfigError("rate must be positive")
    return schema.payload_bits * rate_hz

"""Image and weight-file serialization.

Images travel as binary portable pixmaps (P6, maxval 255), scaled to
[0, 1] in memory. Model weights use a little-endian binary format:

    magic "EFRW" | version u16 | config_len u32 | config JSON (UTF-8)
    then per schema entry, in the model's documented order:
    name_len u16 | name | rank u8 | dims u32 each | float32 payload

The config JSON carries keys C, B, r, activation, attention, in_channels.
Scalars are stored as 32-bit floats regardless of compute precision, so
64-bit round-trips are lossy by design; loads widen to the requested
dtype. Every byte of a file must be consumed or the load fails. A sibling
archive format (magic "EFRT") stores arbitrary named tensors plus a JSON
meta block and backs optimizer checkpoints and external feature-extractor
weights.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import Model, ModelConfig, parameter_schema
from .tensor import Tensor

__all__ = [
    "PixmapError",
    "WeightFormatError",
    "read_image",
    "write_image",
    "save_weights",
    "load_weights",
    "save_tensor_archive",
    "load_tensor_archive",
    "WEIGHT_MAGIC",
    "ARCHIVE_MAGIC",
    "FORMAT_VERSION",
]

WEIGHT_MAGIC = b"EFRW"
ARCHIVE_MAGIC = b"EFRT"
FORMAT_VERSION = 1


class PixmapError(ValueError):
    """Malformed P6 stream; the message includes the byte offset."""


class WeightFormatError(ValueError):
    """Malformed weight/archive file; the message names the offending field."""


# ---- P6 pixmaps ---------------------------------------------------------------


def _parse_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos : pos + 1]
        if ch == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise PixmapError(f"expected header token at byte {start}")
    return buf[start:pos], pos


def read_image(path, dtype=np.float64) -> Tensor:
    """Read a P6 pixmap into a (1, 3, h, w) tensor with values b/255."""
    buf = Path(path).read_bytes()
    if buf[:2] != b"P6":
        raise PixmapError(f"bad magic at byte 0: expected 'P6', got {buf[:2]!r}")
    pos = 2
    fields = []
    for _ in range(3):
        token, pos = _parse_token(buf, pos)
        try:
            fields.append(int(token))
        except ValueError:
            raise PixmapError(f"non-numeric header token at byte {pos - len(token)}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise PixmapError(f"invalid dimensions {width}x{height} in header")
    if maxval != 255:
        raise PixmapError(f"unsupported maxval {maxval} at byte {pos - len(str(maxval))}")
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise PixmapError(f"expected single whitespace after maxval at byte {pos}")
    pos += 1
    expected = width * height * 3
    payload = buf[pos : pos + expected]
    if len(payload) != expected:
        raise PixmapError(
            f"truncated payload at byte {pos + len(payload)}: "
            f"need {expected} bytes, have {len(payload)}"
        )
    if pos + expected != len(buf):
        raise PixmapError(f"trailing bytes after payload at byte {pos + expected}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    data = (arr.astype(dtype) / 255.0).transpose(2, 0, 1)[None]
    return Tensor(np.ascontiguousarray(data))


def write_image(img, path) -> None:
    """Write a (1, 3, h, w) / (3, h, w) array or tensor in [0, 1] as P6.

    Bytes are round(x * 255) with round-half-up, clamped to [0, 255].
    """
    data = img.data if isinstance(img, Tensor) else np.asarray(img, dtype=np.float64)
    if data.ndim == 4:
        if data.shape[0] != 1:
            raise ValueError(f"write_image expects a single image, got batch {data.shape[0]}")
        data = data[0]
    if data.ndim != 3 or data.shape[0] != 3:
        raise ValueError(f"write_image expects (3, h, w), got shape {data.shape}")
    quant = np.clip(np.floor(data * 255.0 + 0.5), 0, 255).astype(np.uint8)
    h, w = quant.shape[1], quant.shape[2]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + quant.transpose(1, 2, 0).tobytes())


# ---- binary tensor records -----------------------------------------------------


def _write_record(parts: list[bytes], name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    parts.append(struct.pack("<H", len(encoded)))
    parts.append(encoded)
    parts.append(struct.pack("<B", arr.ndim))
    parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, buf: bytes, what: str):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n: int, field: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise WeightFormatError(
                f"{self.what}: truncated while reading {field} at byte {self.pos}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u16(self, field: str) -> int:
        return struct.unpack("<H", self.take(2, field))[0]

    def u32(self, field: str) -> int:
        return struct.unpack("<I", self.take(4, field))[0]

    def u8(self, field: str) -> int:
        return self.take(1, field)[0]

    def record(self) -> tuple[str, np.ndarray]:
        name_len = self.u16("name length")
        name = self.take(name_len, "name").decode("utf-8")
        rank = self.u8(f"rank of {name}")
        dims = tuple(self.u32(f"dim of {name}") for _ in range(rank))
        count = 1
        for d in dims:
            count *= d
        raw = self.take(4 * count, f"payload of {name}")
        arr = np.frombuffer(raw, dtype="<f4").reshape(dims)
        return name, arr

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise WeightFormatError(
                f"{self.what}: {len(self.buf) - self.pos} trailing bytes at byte {self.pos}"
            )


def _read_header(reader: _Reader, magic: bytes) -> dict:
    got = reader.take(4, "magic")
    if got != magic:
        raise WeightFormatError(
            f"{reader.what}: bad magic at byte 0: expected {magic!r}, got {got!r}"
        )
    version = reader.u16("version")
    if version > FORMAT_VERSION:
        raise WeightFormatError(f"{reader.what}: unsupported version {version}")
    meta_len = reader.u32("header length")
    raw = reader.take(meta_len, "header JSON")
    try:
        return json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFormatError(f"{reader.what}: invalid header JSON: {exc}") from None


# ---- model weights --------------------------------------------------------------


def save_weights(model: Model, path) -> None:
    cfg = model.config
    header = json.dumps(
        {
            "C": cfg.channels,
            "B": cfg.blocks,
            "r": cfg.scale,
            "activation": cfg.activation,
            "attention": cfg.attention,
            "in_channels": cfg.in_channels,
        }
    ).encode("utf-8")
    parts = [WEIGHT_MAGIC, struct.pack("<H", FORMAT_VERSION), struct.pack("<I", len(header)), header]
    for name, _ in parameter_schema(cfg):
        _write_record(parts, name, model.parameters[name].data)
    Path(path).write_bytes(b"".join(parts))


def load_weights(path, dtype=np.float32, requires_grad: bool = False) -> Model:
    reader = _Reader(Path(path).read_bytes(), f"weights {path}")
    meta = _read_header(reader, WEIGHT_MAGIC)
    try:
        cfg = ModelConfig(
            channels=int(meta["C"]),
            blocks=int(meta["B"]),
            scale=int(meta["r"]),
            activation=str(meta["activation"]),
            attention=str(meta["attention"]),
            in_channels=int(meta["in_channels"]),
        )
    except KeyError as exc:
        raise WeightFormatError(f"weights {path}: config missing key {exc.args[0]!r}") from None
    cfg.validate()
    params: dict[str, Tensor] = {}
    for expected_name, expected_shape in parameter_schema(cfg):
        name, arr = reader.record()
        if name != expected_name:
            raise WeightFormatError(
                f"weights {path}: expected tensor {expected_name!r}, found {name!r}"
            )
        if arr.shape != expected_shape:
            raise WeightFormatError(
                f"weights {path}: tensor {name} has dims {arr.shape}, expected {expected_shape}"
            )
        params[name] = Tensor(arr.astype(dtype), requires_grad=requires_grad)
    reader.done()
    return Model(cfg, params)


# ---- generic named-tensor archives ----------------------------------------------


def save_tensor_archive(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    header = json.dumps({"meta": meta or {}, "names": list(tensors)}).encode("utf-8")
    parts = [ARCHIVE_MAGIC, struct.pack("<H", FORMAT_VERSION), struct.pack("<I", len(header)), header]
    for name, arr in tensors.items():
        _write_record(parts, name, np.asarray(arr))
    Path(path).write_bytes(b"".join(parts))


def load_tensor_archive(path, dtype=np.float32) -> tuple[dict[str, np.ndarray], dict]:
    reader = _Reader(Path(path).read_bytes(), f"archive {path}")
    header = _read_header(reader, ARCHIVE_MAGIC)
    names = header.get("names", [])
    tensors: dict[str, np.ndarray] = {}
    for expected in names:
        name, arr = reader.record()
        if name != expected:
            raise WeightFormatError(
                f"archive {path}: expected tensor {expected!r}, found {name!r}"
            )
        tensors[name] = arr.astype(dtype)
    reader.done()
    return tensors, header.get("meta", {})

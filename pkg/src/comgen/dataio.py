"""FIDS1: a flat container for factorized image datasets.

Layout (all integers little-endian)::

    bytes 0..7    magic  b"FIDS1\\0\\0\\0"
    bytes 8..15   N, uint64 length of the JSON header
    next N bytes  UTF-8 JSON header
    remainder     uint8 pixels, count x height x width x channels,
                  image-major by flat combination index, channels last

Pixels are quantized with ``round(255 * p)`` and read back as ``byte / 255``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FidsError, FidsHeaderError, FidsPayloadError, FidsVersionError
from .factorspace import FactorSpace

MAGIC = b"FIDS1\x00\x00\x00"
_HEADER_KEYS = ("magic", "height", "width", "channels", "dtype", "factors", "count")


def quantize(images: np.ndarray) -> np.ndarray:
    return np.round(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_fids(images: np.ndarray, space: FactorSpace) -> bytes:
    images = np.asarray(images)
    if images.ndim != 4:
        raise FidsError(f"expected (count, channels, height, width) images, got shape {images.shape}")
    count, channels, height, width = images.shape
    if count != space.total:
        raise FidsError(f"{count} images for a factor space with {space.total} combinations")
    header = {
        "magic": "FIDS1",
        "height": height,
        "width": width,
        "channels": channels,
        "dtype": "u8",
        "factors": space.to_list(),
        "count": count,
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = quantize(images).transpose(0, 2, 3, 1).tobytes(order="C")
    return MAGIC + struct.pack("<Q", len(raw)) + raw + payload


def write_fids(images: np.ndarray, space: FactorSpace, path) -> None:
    data = encode_fids(images, space)
    Path(path).write_bytes(data)


def decode_fids(data: bytes) -> tuple[np.ndarray, FactorSpace]:
    if len(data) < 16:
        raise FidsHeaderError(f"file too short for a FIDS preamble ({len(data)} bytes)")
    magic = data[:8]
    if magic != MAGIC:
        if magic.startswith(b"FIDS"):
            version = magic.rstrip(b"\0").decode(errors="replace")
            raise FidsVersionError(f"unsupported FIDS version {version!r}")
        raise FidsVersionError(f"bad magic {magic!r}")
    (n,) = struct.unpack("<Q", data[8:16])
    if 16 + n > len(data):
        raise FidsHeaderError(f"header length {n} runs past the end of the file")
    try:
        header = json.loads(data[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FidsHeaderError(f"malformed header: {exc}") from exc
    if not isinstance(header, dict) or any(k not in header for k in _HEADER_KEYS):
        raise FidsHeaderError(f"header must be an object with keys {_HEADER_KEYS}")
    if header["magic"] != "FIDS1":
        raise FidsVersionError(f"header magic {header['magic']!r} != 'FIDS1'")
    if header["dtype"] != "u8":
        raise FidsHeaderError(f"unsupported dtype {header['dtype']!r}")
    try:
        space = FactorSpace.from_list(header["factors"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FidsHeaderError(f"bad factor specs: {exc}") from exc
    count, h, w, c = (int(header[k]) for k in ("count", "height", "width", "channels"))
    if count != space.total:
        raise FidsHeaderError(f"count {count} != product of factor cardinalities {space.total}")
    expected = count * h * w * c
    payload = data[16 + n:]
    if len(payload) != expected:
        raise FidsPayloadError(f"payload length: expected {expected} bytes, found {len(payload)}")
    pix = np.frombuffer(payload, dtype=np.uint8).reshape(count, h, w, c).transpose(0, 3, 1, 2)
    return (pix.astype(np.float32) / np.float32(255.0)), space


def read_fids(path) -> tuple[np.ndarray, FactorSpace]:
    return decode_fids(Path(path).read_bytes())


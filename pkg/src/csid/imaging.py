"""Image ingestion and channel-plane utilities.

Images are held as float64 arrays of shape (height, width, 3) with samples in
[0, 1]; a channel plane is the corresponding (height, width) slice.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
import png

from .errors import DecodeError, UnsupportedFormatError

SIDECAR_NAME = "labels.json"


@dataclass(frozen=True)
class ImageRGB:
    data: np.ndarray  # (height, width, 3), float64 in [0, 1]
    space_tag: Optional[str] = None
    name: Optional[str] = None

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise UnsupportedFormatError(f"expected (h, w, 3) array, got {self.data.shape}")
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise ValueError("samples must lie in [0, 1]")
        self.data.setflags(write=False)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def with_tag(self, tag: Optional[str]) -> "ImageRGB":
        return replace(self, space_tag=tag)

    @classmethod
    def from_planes(cls, planes, space_tag=None, name=None) -> "ImageRGB":
        return cls(np.stack([np.asarray(p, dtype=np.float64) for p in planes], axis=-1),
                   space_tag=space_tag, name=name)


def _read_sidecar(path: Path) -> Optional[str]:
    sidecar = path.parent / SIDECAR_NAME
    if not sidecar.exists():
        return None
    with open(sidecar) as fh:
        return json.load(fh).get(path.name)


def _decode_png(path: Path) -> np.ndarray:
    try:
        width, height, rows, info = png.Reader(filename=str(path)).asDirect()
        raw = np.vstack([np.asarray(r, dtype=np.float64) for r in rows])
    except (png.Error, OSError, ValueError) as exc:
        raise DecodeError(f"{path}: {exc}") from exc
    if info.get("greyscale"):
        raise UnsupportedFormatError(f"{path}: greyscale PNG is not an RGB raster")
    planes = info["planes"]
    raw = raw.reshape(height, width, planes)[:, :, :3]
    return raw / float(2 ** info["bitdepth"] - 1)


def _ppm_tokens(buf: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(buf):
            raise DecodeError("truncated PPM header")
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def _decode_ppm(path: Path) -> np.ndarray:
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DecodeError(f"{path}: {exc}") from exc
    if buf[:2] != b"P6":
        if buf[:1] == b"P":
            raise UnsupportedFormatError(f"{path}: only binary RGB PPM (P6) is supported")
        raise DecodeError(f"{path}: not a PPM file")
    try:
        (magic, w, h, maxval), offset = _ppm_tokens(buf, 4)
        width, height, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise DecodeError(f"{path}: malformed PPM header") from exc
    if not 0 < maxval < 65536:
        raise DecodeError(f"{path}: invalid maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = width * height * 3
    body = buf[offset:offset + n * dtype.itemsize]
    if len(body) != n * dtype.itemsize:
        raise DecodeError(f"{path}: truncated PPM raster")
    codes = np.frombuffer(body, dtype=dtype).astype(np.float64)
    return codes.reshape(height, width, 3) / maxval


def load_image(path) -> ImageRGB:
    """Decode an 8/16-bit RGB PNG or binary PPM into unit-interval planes.

    The ground-truth space tag is read from a ``labels.json`` sidecar in the
    image's directory when one exists.
    """
    path = Path(path)
    if not path.exists():
        raise DecodeError(f"{path}: no such file")
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic.startswith(b"\x89PNG"):
        data = _decode_png(path)
    elif magic.startswith(b"P"):
        data = _decode_ppm(path)
    else:
        raise UnsupportedFormatError(f"{path}: not a PNG or PPM file")
    return ImageRGB(np.clip(data, 0.0, 1.0), space_tag=_read_sidecar(path), name=path.name)


def quantize(img: ImageRGB, bitdepth: int = 16) -> np.ndarray:
    top = 2 ** bitdepth - 1
    return np.rint(img.data * top).astype(np.uint16 if bitdepth > 8 else np.uint8)


def save_png(img: ImageRGB, path, bitdepth: int = 16) -> None:
    codes = quantize(img, bitdepth)
    h, w, _ = codes.shape
    writer = png.Writer(width=w, height=h, greyscale=False, bitdepth=bitdepth)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        writer.write(fh, codes.reshape(h, w * 3).tolist())
    os.replace(tmp, path)


def save_ppm(img: ImageRGB, path, maxval: int = 255) -> None:
    codes = np.rint(img.data * maxval)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    header = f"P6\n{img.width} {img.height}\n{maxval}\n".encode()
    with open(path, "wb") as fh:
        fh.write(header + codes.astype(dtype).tobytes())


def extract_channel(img: ImageRGB, k: int) -> np.ndarray:
    if k not in (0, 1, 2):
        raise ValueError(f"channel index must be 0, 1 or 2, got {k!r}")
    return img.data[:, :, k]


def sample_positions(n_pixels: int, count: int, seed: int) -> np.ndarray:
    if count > n_pixels or count < 0:
        raise ValueError(f"cannot draw {count} samples from {n_pixels} pixels")
    return np.random.default_rng(seed).choice(n_pixels, size=count, replace=False)


def sample_pixels(plane: np.ndarray, count: int, seed: int) -> np.ndarray:
    """Uniform sample of ``count`` plane values without replacement."""
    plane = np.asarray(plane)
    return plane.ravel()[sample_positions(plane.size, count, seed)]


def neighborhood_offsets(J: int, include_center: bool) -> list[tuple[int, int]]:
    """Offsets (i, j) in [-J, J]^2, swept row by row from the top left."""
    if J < 0:
        raise ValueError("J must be non-negative")
    return [(i, j) for i in range(-J, J + 1) for j in range(-J, J + 1)
            if include_center or (i, j) != (0, 0)]

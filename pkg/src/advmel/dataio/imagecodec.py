"""Binary PPM (P6, maxval 255) plus an optional lossless float64 sidecar.

The sidecar sits next to the PPM with the suffix ``.f64`` and holds the
image as raw little-endian float64 values in channel-planar (C, H, W) order.
Readers prefer it when present; the PPM is the 8-bit preview and the
fallback.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from ..errors import ParseError, ValidationError

SIDECAR_SUFFIX = ".f64"


def sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(SIDECAR_SUFFIX)


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_ppm(image: np.ndarray) -> bytes:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValidationError(f"expected a (3, H, W) image, got shape {image.shape}")
    if not np.all(np.isfinite(image)) or image.min() < 0.0 or image.max() > 1.0:
        raise ValidationError("pixel values must be finite and in [0, 1]")
    _, h, w = image.shape
    pixels = np.round(image * 255.0).astype(np.uint8).transpose(1, 2, 0)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ParseError("unexpected end of PPM header", offset=pos)
    return data[start:pos], pos


def decode_ppm(data: bytes) -> np.ndarray:
    magic, pos = _read_token(data, 0)
    if magic != b"P6":
        raise ParseError(f"bad magic {magic!r}, expected P6", offset=0)
    fields = []
    for name in ("width", "height", "maxval"):
        start = pos
        tok, pos = _read_token(data, pos)
        if not tok.isdigit():
            raise ParseError(f"bad {name} {tok!r}", offset=start)
        fields.append(int(tok))
    w, h, maxval = fields
    if w <= 0 or h <= 0:
        raise ParseError("image dimensions must be positive", offset=pos)
    if maxval != 255:
        raise ParseError(f"unsupported maxval {maxval}", offset=pos)
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ParseError("missing whitespace after maxval", offset=pos)
    pos += 1
    need = 3 * w * h
    if len(data) - pos < need:
        raise ParseError(f"truncated pixel data: need {need} bytes, have {len(data) - pos}", offset=len(data))
    pixels = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos).reshape(h, w, 3)
    return pixels.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_image(path: str | Path, image: np.ndarray, sidecar: bool = False) -> None:
    image = np.asarray(image, dtype=np.float64)
    atomic_write_bytes(path, encode_ppm(image))
    if sidecar:
        atomic_write_bytes(sidecar_path(path), np.ascontiguousarray(image, dtype="<f8").tobytes())


def read_image(path: str | Path, prefer_sidecar: bool = True) -> np.ndarray:
    path = Path(path)
    preview = decode_ppm(path.read_bytes())
    side = sidecar_path(path)
    if prefer_sidecar and side.exists():
        raw = side.read_bytes()
        need = preview.size * 8
        if len(raw) != need:
            raise ParseError(f"sidecar {side.name} has {len(raw)} bytes, expected {need}", offset=min(len(raw), need))
        return np.frombuffer(raw, dtype="<f8").reshape(preview.shape).astype(np.float64)
    return preview

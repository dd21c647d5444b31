"""Raster file I/O.

All images are ``(height, width, 3)`` uint8 arrays in red-green-blue channel
order. Binary portable pixmaps (P6) are encoded and decoded in-house so that
written corpora are byte-deterministic; PNG decoding goes through Pillow.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .errors import ImageDecodeError

SUPPORTED_SUFFIXES = (".ppm", ".png")


def _read_ppm_token(buf: io.BufferedReader) -> bytes:
    """Read one whitespace-delimited header token, skipping '#' comments."""
    token = b""
    while True:
        ch = buf.read(1)
        if ch == b"":
            break
        if ch == b"#":
            while ch not in (b"", b"\n"):
                ch = buf.read(1)
            continue
        if ch.isspace():
            if token:
                break
            continue
        token += ch
    return token


def read_ppm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = _read_ppm_token(fh)
        if magic != b"P6":
            raise ImageDecodeError(f"{path}: not a binary portable pixmap (magic {magic!r})")
        try:
            width = int(_read_ppm_token(fh))
            height = int(_read_ppm_token(fh))
            maxval = int(_read_ppm_token(fh))
        except ValueError as exc:
            raise ImageDecodeError(f"{path}: malformed pixmap header") from exc
        if width <= 0 or height <= 0:
            raise ImageDecodeError(f"{path}: non-positive dimensions {width}x{height}")
        if maxval != 255:
            raise ImageDecodeError(f"{path}: unsupported maxval {maxval} (need 255)")
        data = fh.read(width * height * 3)
    if len(data) != width * height * 3:
        raise ImageDecodeError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3).copy()


def write_ppm(path: str | Path, pixels: np.ndarray) -> None:
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) array, got shape {pixels.shape}")
    height, width = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (width, height))
        fh.write(pixels.tobytes())


def read_png(path: str | Path) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageDecodeError(f"{path}: {exc}") from exc


def read_image(path: str | Path) -> np.ndarray:
    """Decode a supported raster file into an (h, w, 3) uint8 RGB array."""
    suffix = Path(path).suffix.lower()
    if suffix == ".ppm":
        return read_ppm(path)
    if suffix == ".png":
        return read_png(path)
    raise ImageDecodeError(f"{path}: unsupported image format {suffix!r}")

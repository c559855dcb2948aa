"""Image file I/O: binary PPM (P6), 8-bit PNG, and PGM debug dumps.

Images are carried as uint8 numpy arrays of shape (height, width, 3), RGB
order, row-major.
"""

from __future__ import annotations

import io
import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def validate_rgb(img: np.ndarray) -> np.ndarray:
    if not isinstance(img, np.ndarray) or img.ndim != 3 or img.shape[2] != 3:
        raise FormatError("expected an RGB array of shape (h, w, 3)")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise FormatError("image must be at least 1x1")
    if img.dtype != np.uint8:
        raise FormatError(f"expected uint8 pixels, got {img.dtype}")
    return img


def _read_ppm_token(buf: io.BufferedReader) -> bytes:
    """Next whitespace-delimited PPM header token, skipping # comments."""
    tok = b""
    while True:
        c = buf.read(1)
        if c == b"":
            raise FormatError("truncated PPM header")
        if c == b"#":
            while c not in (b"\n", b""):
                c = buf.read(1)
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def decode_ppm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(2)
        if magic != b"P6":
            raise FormatError(f"not a binary PPM (P6) file: {path}")
        try:
            width = int(_read_ppm_token(f))
            height = int(_read_ppm_token(f))
            maxval = int(_read_ppm_token(f))
        except ValueError as e:
            raise FormatError(f"bad PPM header in {path}: {e}") from e
        if width < 1 or height < 1:
            raise FormatError(f"bad PPM dimensions {width}x{height}")
        if maxval != 255:
            raise FormatError(f"only maxval 255 PPM supported, got {maxval}")
        data = f.read(width * height * 3)
    if len(data) != width * height * 3:
        raise FormatError(f"truncated PPM pixel data in {path}")
    return np.frombuffer(data, np.uint8).reshape(height, width, 3)


def decode_image(path: str | os.PathLike) -> np.ndarray:
    """Decode a binary PPM (P6) or 8-bit PNG file to an RGB uint8 array.

    Raises OSError for unreadable paths and FormatError for anything that
    is not one of the two supported encodings.
    """
    with open(path, "rb") as f:
        head = f.read(8)
    if head[:2] == b"P6":
        return decode_ppm(path)
    if head == _PNG_MAGIC:
        try:
            with Image.open(path) as im:
                if im.mode not in ("RGB", "RGBA", "L", "P", "LA"):
                    raise FormatError(f"unsupported PNG mode {im.mode}")
                return validate_rgb(np.asarray(im.convert("RGB")))
        except UnidentifiedImageError as e:
            raise FormatError(f"unreadable PNG {path}: {e}") from e
    raise FormatError(f"unsupported image encoding: {path}")


def write_ppm(path: str | os.PathLike, img: np.ndarray) -> None:
    validate_rgb(img)
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(img).tobytes())


def write_pgm(path: str | os.PathLike, plane: np.ndarray) -> None:
    """Write a single uint8 plane as binary PGM (P5)."""
    if plane.ndim != 2 or plane.dtype != np.uint8:
        raise FormatError("PGM output expects a 2-d uint8 plane")
    h, w = plane.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(plane).tobytes())


def mirror_image(img: np.ndarray) -> np.ndarray:
    """Horizontal flip, used for positive-sample augmentation."""
    return np.ascontiguousarray(img[:, ::-1])

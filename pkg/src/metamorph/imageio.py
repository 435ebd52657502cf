"""File formats: grayscale PGM/PNG images and the binary deformation format.

Images are restricted to (2^M + 1)-square 8-bit grayscale so that the
nested-grid structure of the solver is preserved; other sizes are
rejected rather than resampled.  Deformations round-trip bit-exactly
through a small little-endian binary format:

    magic  "MDEF1"            5 ASCII bytes
    level  N                  u32 LE
    dims   (rows, cols)       2 x u32 LE, both 2^N + 3
    data   row-major (dx, dy) float64 LE pairs

All writes are atomic (write to a temporary file, then rename).
"""

from __future__ import annotations

import math
import os
import struct
import tempfile

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from .errors import DimensionError, FormatError
from .grids import Deformation, Image

_MAGIC = b"MDEF1"


def _atomic_write(path: str, data: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-io-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _level_for_size(size: int) -> int:
    """Level M with size = 2^M + 1, or a DimensionError naming the nearest."""
    if size >= 3:
        m = round(math.log2(size - 1))
        if 2 ** m + 1 == size:
            return m
    else:
        m = 1
    nearest = 2 ** max(m, 1) + 1
    raise DimensionError(
        f"image size {size} is not 2^M + 1; nearest valid size is {nearest}",
        nearest_valid=nearest)


def _from_gray(pix: np.ndarray) -> Image:
    if pix.shape[0] != pix.shape[1]:
        raise DimensionError(
            f"image must be square, got {pix.shape[1]}x{pix.shape[0]}",
            nearest_valid=2 ** max(round(math.log2(max(pix.shape) - 1)), 1) + 1)
    level = _level_for_size(pix.shape[0])
    # file rows run top to bottom; nodal storage is values[ix, iy] with
    # iy increasing upward
    vals = pix.astype(float).T[:, ::-1] / 255.0
    return Image(level, np.ascontiguousarray(vals))


def to_gray(img: Image) -> np.ndarray:
    """Quantize to 8-bit pixel rows (top to bottom), round half up."""
    v = np.clip(img.values, 0.0, 1.0)
    q = np.floor(v * 255.0 + 0.5).astype(np.uint8)
    return np.ascontiguousarray(q[:, ::-1].T)


def _read_pgm(data: bytes) -> np.ndarray:
    # header: P5, whitespace/comment-separated width height maxval
    if not data.startswith(b"P5"):
        raise FormatError("not a binary (P5) PGM file")
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise FormatError(f"malformed PGM header: {exc}") from exc
    if maxval != 255:
        raise FormatError(f"only 8-bit PGM supported, maxval {maxval}")
    expected = width * height
    body = data[pos:pos + expected]
    if len(body) != expected:
        raise FormatError("PGM payload shorter than header promises")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width)


def load_image(path: str) -> Image:
    """Read a grayscale PGM (binary P5) or PNG into the FEM image space."""
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head.startswith(b"P5"):
        with open(path, "rb") as fh:
            return _from_gray(_read_pgm(fh.read()))
    try:
        with PILImage.open(path) as im:
            if im.format != "PNG":
                raise FormatError(f"unsupported image format {im.format}")
            return _from_gray(np.asarray(im.convert("L")))
    except UnidentifiedImageError as exc:
        raise FormatError(f"unrecognized image file {path}") from exc


def save_image(img: Image, path: str) -> None:
    """Write as PGM or PNG depending on the file extension."""
    pix = to_gray(img)
    if path.lower().endswith(".pgm"):
        header = f"P5\n{pix.shape[1]} {pix.shape[0]}\n255\n".encode()
        _atomic_write(path, header + pix.tobytes())
        return
    buf = PILImage.fromarray(pix, mode="L")
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-io-", suffix=".png")
    os.close(fd)
    try:
        buf.save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_deformation(phi: Deformation, path: str) -> None:
    rows, cols = phi.coeffs.shape[:2]
    header = _MAGIC + struct.pack("<III", phi.level, rows, cols)
    body = phi.coeffs.astype("<f8").tobytes()
    _atomic_write(path, header + body)


def load_deformation(path: str) -> Deformation:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(_MAGIC):
        raise FormatError("not a deformation file (bad magic)")
    if len(data) < len(_MAGIC) + 12:
        raise FormatError("truncated deformation header")
    level, rows, cols = struct.unpack_from("<III", data, len(_MAGIC))
    count = rows * cols * 2
    body = data[len(_MAGIC) + 12:]
    if len(body) != 8 * count:
        raise FormatError(
            f"deformation payload has {len(body)} bytes, expected {8 * count}")
    coeffs = np.frombuffer(body, dtype="<f8").reshape(rows, cols, 2).copy()
    try:
        return Deformation(level, coeffs)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc

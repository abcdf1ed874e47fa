"""Binary PPM (P6) and PGM (P5) read/write.

Images travel as float arrays in [0, 1]; on disk they are 8-bit with maxval
255. Rounding is round-half-away-from-zero via ``np.rint`` on value * 255.
"""

from __future__ import annotations

import numpy as np

from .errors import IOFormatError
from .tensors import as_f64


def _to_u8(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(as_f64(arr) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    """image: [3, h, w] or [1, h, w] in [0, 1]; grayscale is replicated."""
    arr = as_f64(image)
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise IOFormatError(f"expected [1|3, h, w], got {arr.shape}")
    if arr.shape[0] == 1:
        arr = np.repeat(arr, 3, axis=0)
    _, h, w = arr.shape
    data = _to_u8(arr).transpose(1, 2, 0).tobytes()
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(data)


def write_pgm(path, gray: np.ndarray) -> None:
    """gray: [h, w] in [0, 1]."""
    arr = as_f64(gray)
    if arr.ndim != 2:
        raise IOFormatError(f"expected [h, w], got {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(_to_u8(arr).tobytes())


def _read_header(blob: bytes, magic: bytes):
    """Parses 'P6/P5, whitespace+comments, w h maxval' and returns offsets."""
    if blob[:2] != magic:
        raise IOFormatError(f"bad magic {blob[:2]!r}, expected {magic!r}")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IOFormatError("truncated header")
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise IOFormatError(f"unsupported maxval {maxval}")
    return w, h, pos


def read_ppm(path) -> np.ndarray:
    """Returns [3, h, w] float in [0, 1]."""
    with open(path, "rb") as f:
        blob = f.read()
    w, h, pos = _read_header(blob, b"P6")
    need = w * h * 3
    raw = blob[pos:pos + need]
    if len(raw) != need:
        raise IOFormatError(f"expected {need} pixel bytes, got {len(raw)}")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def read_pgm(path) -> np.ndarray:
    """Returns [h, w] float in [0, 1]."""
    with open(path, "rb") as f:
        blob = f.read()
    w, h, pos = _read_header(blob, b"P5")
    need = w * h
    raw = blob[pos:pos + need]
    if len(raw) != need:
        raise IOFormatError(f"expected {need} pixel bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0

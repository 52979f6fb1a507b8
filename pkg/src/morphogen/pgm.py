"""Binary PGM (P5, maxval 255) reading and writing.

Pixel bytes are round(255 * intensity) with intensities clamped to [0,1];
reading maps bytes back to b/255. The format is codec-free, so files are
bit-reproducible across platforms.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def image_to_bytes(image: np.ndarray) -> np.ndarray:
    """Quantize a float image in [0,1] to uint8."""
    return np.rint(255.0 * np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)).astype(np.uint8)


def encode_pgm(image: np.ndarray) -> bytes:
    data = image_to_bytes(image)
    if data.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {data.shape}")
    h, w = data.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes()


def write_pgm(image: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(encode_pgm(image))


def decode_pgm(blob: bytes) -> np.ndarray:
    """Parse a P5 PGM into a float image in [0,1]."""
    fields: list[bytes] = []
    i = 0
    while len(fields) < 4:
        while i < len(blob) and blob[i : i + 1].isspace():
            i += 1
        if blob[i : i + 1] == b"#":  # comment line
            while i < len(blob) and blob[i] != 0x0A:
                i += 1
            continue
        start = i
        while i < len(blob) and not blob[i : i + 1].isspace():
            i += 1
        fields.append(blob[start:i])
    i += 1  # single whitespace after maxval
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if magic != b"P5":
        raise ValueError(f"not a binary PGM: magic {magic!r}")
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=i)
    return data.reshape(h, w).astype(np.float64) / 255.0


def read_pgm(path: str | Path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())

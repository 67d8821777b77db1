"""Binary PPM (P6) image and PGM (P5) mask IO.

Both formats use maxval 255. Images scale to floats in [0,1]; masks
threshold at 128 into {0,1}, so writing {0,255} masks round-trips exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ParseError


def _scan_header(blob: bytes, path, expected_magic: bytes) -> tuple[int, int, int]:
    """Parse magic / width / height / maxval; returns (width, height, payload offset)."""
    if blob[:2] != expected_magic:
        raise ParseError(f"{path}: bad magic {blob[:2]!r}, expected {expected_magic!r}", offset=0)
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        token = blob[start:pos]
        if not token:
            raise ParseError(f"{path}: truncated header", offset=start)
        if not token.isdigit():
            raise ParseError(f"{path}: non-numeric header token {token!r}", offset=start)
        fields.append(int(token))
    if pos >= len(blob):
        raise ParseError(f"{path}: missing payload", offset=pos)
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise ParseError(f"{path}: invalid dimensions {width}x{height}", offset=2)
    if maxval != 255:
        raise ParseError(f"{path}: unsupported maxval {maxval}, expected 255", offset=2)
    return width, height, pos


def read_image_ppm(path) -> np.ndarray:
    """P6 file to a (3, H, W) float array in [0, 1]."""
    blob = Path(path).read_bytes()
    width, height, pos = _scan_header(blob, path, b"P6")
    need = width * height * 3
    if len(blob) - pos < need:
        raise ParseError(f"{path}: payload truncated, need {need} bytes, have {len(blob) - pos}", offset=pos)
    raw = np.frombuffer(blob, dtype=np.uint8, count=need, offset=pos)
    return raw.reshape(height, width, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def write_image_ppm(path, image: np.ndarray) -> None:
    """(3, H, W) floats in [0, 1] to a P6 file."""
    c, h, w = image.shape
    if c != 3:
        raise ValueError(f"expected 3 channels, got {c}")
    raw = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + raw.tobytes())


def read_mask_pgm(path) -> np.ndarray:
    """P5 file to an (H, W) binary {0,1} float array (threshold 128)."""
    blob = Path(path).read_bytes()
    width, height, pos = _scan_header(blob, path, b"P5")
    need = width * height
    if len(blob) - pos < need:
        raise ParseError(f"{path}: payload truncated, need {need} bytes, have {len(blob) - pos}", offset=pos)
    raw = np.frombuffer(blob, dtype=np.uint8, count=need, offset=pos)
    return (raw.reshape(height, width) >= 128).astype(np.float64)


def write_mask_pgm(path, mask: np.ndarray) -> None:
    """(H, W) binary mask to a P5 file with foreground 255."""
    h, w = mask.shape
    raw = np.where(np.asarray(mask) != 0, 255, 0).astype(np.uint8)
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + raw.tobytes())

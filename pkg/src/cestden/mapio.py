"""Emission of 2-D maps as binary 8-bit PGM and full-precision CSV."""

from __future__ import annotations

import numpy as np


def write_pgm(map2d: np.ndarray, path, window: tuple | None = None) -> tuple:
    """Write a float map as binary (P5) PGM, windowed to 8 bits.

    window is (lo, hi); None means the map's min/max. Values are clipped to
    the window and scaled linearly to 0..255. A degenerate window (hi == lo)
    writes all zeros. Returns the window actually applied.
    """
    arr = np.asarray(map2d, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("map contains non-finite values")
    if window is None:
        lo, hi = float(arr.min()), float(arr.max())
    else:
        lo, hi = float(window[0]), float(window[1])
        if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
            raise ValueError(f"invalid window ({lo}, {hi})")
    if hi > lo:
        scaled = np.clip((arr - lo) / (hi - lo), 0.0, 1.0) * 255.0
        pixels = np.rint(scaled).astype(np.uint8)
    else:
        pixels = np.zeros(arr.shape, dtype=np.uint8)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())
    return (lo, hi)


def write_mask_pgm(mask: np.ndarray, path) -> None:
    """Boolean mask as PGM: True -> 255, False -> 0."""
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.dtype != np.bool_:
        raise ValueError("expected a 2-D boolean mask")
    write_pgm(mask.astype(np.float64), path, window=(0.0, 1.0))


def read_pgm(path) -> np.ndarray:
    """Binary PGM back to a (rows, cols) uint8 array."""
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(b"P5"):
        raise ValueError("not a binary PGM file")
    # header = magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments running to end of line
    tokens = []
    pos = 2
    while len(tokens) < 3 and pos < len(blob):
        c = blob[pos : pos + 1]
        if c == b"#":
            pos = blob.index(b"\n", pos) + 1
        elif c.isspace():
            pos += 1
        else:
            end = pos
            while end < len(blob) and not blob[end : end + 1].isspace():
                end += 1
            tokens.append(blob[pos:end])
            pos = end
    if len(tokens) < 3:
        raise ValueError("truncated PGM header")
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise ValueError(f"unsupported PGM maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    data = blob[pos : pos + w * h]
    if len(data) != w * h:
        raise ValueError("truncated PGM payload")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def write_map_csv(map2d: np.ndarray, path) -> None:
    """Full-precision CSV, one line per image row, '.' decimals, LF endings."""
    arr = np.asarray(map2d, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {arr.shape}")
    with open(path, "w", encoding="ascii", newline="") as f:
        for row in arr:
            f.write(",".join(f"{v:.17g}" for v in row))
            f.write("\n")


def read_map_csv(path) -> np.ndarray:
    with open(path, "r", encoding="ascii") as f:
        rows = [line.split(",") for line in f.read().splitlines() if line]
    if not rows:
        raise ValueError("empty map CSV")
    n = len(rows[0])
    if any(len(r) != n for r in rows):
        raise ValueError("ragged map CSV")
    return np.array([[float(v) for v in r] for r in rows], dtype=np.float64)

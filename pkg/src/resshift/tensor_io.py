"""File formats: RSTEN tensors and 8-bit binary PGM/PPM rasters.

RSTEN layout: ``b"RSTEN" | u32 ndim | u32 dims[ndim] | float64 payload``,
all little-endian, payload row-major.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"RSTEN"


def write_tensor(path, x) -> None:
    x = np.asarray(x, dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
    header = TENSOR_MAGIC + struct.pack("<I", x.ndim) + struct.pack(f"<{x.ndim}I", *x.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(x.tobytes())


def read_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:5] != TENSOR_MAGIC:
        raise ValueError(f"{path}: not an RSTEN file")
    (ndim,) = struct.unpack_from("<I", data, 5)
    dims = struct.unpack_from(f"<{ndim}I", data, 9)
    offset = 9 + 4 * ndim
    count = int(np.prod(dims)) if ndim else 1
    if len(data) - offset != 8 * count:
        raise ValueError(f"{path}: payload size does not match shape {dims}")
    return np.frombuffer(data, dtype="<f8", offset=offset).astype(np.float64).reshape(dims)


def write_pnm(path, img) -> None:
    """Write a ``(H, W)``, ``(1, H, W)`` or ``(3, H, W)`` image in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    q = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    if q.ndim == 2:
        magic, body = b"P5", q
    elif q.ndim == 3 and q.shape[0] == 3:
        magic, body = b"P6", q.transpose(1, 2, 0)
    else:
        raise ValueError(f"cannot write shape {img.shape} as PGM/PPM")
    H, W = body.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{W} {H}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(body).tobytes())


def read_pnm(path) -> np.ndarray:
    """Read binary PGM/PPM into ``(C, H, W)`` float64 in [0, 1]."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: only binary PGM (P5) / PPM (P6) supported")
    fields, pos = [], 2
    while len(fields) < 3:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        fields.append(int(data[pos:end]))
        pos = end
    pos += 1
    W, H, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit rasters supported")
    C = 1 if magic == b"P5" else 3
    arr = np.frombuffer(data, dtype=np.uint8, count=H * W * C, offset=pos)
    arr = arr.reshape(H, W, C).transpose(2, 0, 1)
    return arr.astype(np.float64) / 255.0


def load_image_or_tensor(path) -> np.ndarray:
    if str(path).lower().endswith((".pgm", ".ppm", ".pnm")):
        return read_pnm(path)
    return read_tensor(path)


def save_image_or_tensor(path, x) -> None:
    if str(path).lower().endswith((".pgm", ".ppm", ".pnm")):
        write_pnm(path, x)
    else:
        write_tensor(path, x)

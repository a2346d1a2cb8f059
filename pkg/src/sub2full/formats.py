"""Binary containers: OCTI interferogram volumes, OCTB images, PGM previews."""
from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np

from . import ValidationError
from .forward_model import Interferogram
from .reconstruction import BScanImage

OCTI_MAGIC = b"OCTI"
OCTB_MAGIC = b"OCTB"
_OCTI_HEADER = struct.Struct("<4s5I2d")
_OCTB_HEADER = struct.Struct("<4s3IB")
SCALE_CODES = {"linear": 0, "log_normalized": 1}


def write_octi(path: str | Path, volume: list[Interferogram]) -> None:
    if not volume:
        raise ValidationError("cannot write an empty volume")
    n_k, n_alines, n_repeats = volume[0].data.shape
    k = volume[0].k
    header = _OCTI_HEADER.pack(OCTI_MAGIC, 1, n_k, n_alines, len(volume), n_repeats, float(k[0]), float(k[-1]))
    # on-disk order (bscan, repeat, aline, k), k fastest
    data = np.stack([ifg.data.transpose(2, 1, 0) for ifg in volume]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


def read_octi(path: str | Path) -> list[Interferogram]:
    raw = Path(path).read_bytes()
    magic, version, n_k, n_alines, n_bscans, n_repeats, k_min, k_max = _OCTI_HEADER.unpack_from(raw)
    if magic != OCTI_MAGIC:
        raise ValidationError(f"{path}: not an OCTI file")
    if version != 1:
        raise ValidationError(f"{path}: unsupported OCTI version {version}")
    expected = n_bscans * n_repeats * n_alines * n_k
    data = np.frombuffer(raw, dtype="<f4", offset=_OCTI_HEADER.size)
    if data.size != expected:
        raise ValidationError(f"{path}: payload holds {data.size} samples, header implies {expected}")
    data = data.reshape(n_bscans, n_repeats, n_alines, n_k).astype(np.float64)
    k = np.linspace(k_min, k_max, n_k)
    return [Interferogram(np.ascontiguousarray(b.transpose(2, 1, 0)), k, {"bscan": i}) for i, b in enumerate(data)]


def write_octb(path: str | Path, image: BScanImage) -> None:
    depth, lateral = image.pixels.shape
    with open(path, "wb") as fh:
        fh.write(_OCTB_HEADER.pack(OCTB_MAGIC, 1, depth, lateral, SCALE_CODES[image.scale]))
        fh.write(np.ascontiguousarray(image.pixels, dtype="<f4").tobytes())


def read_octb(path: str | Path) -> BScanImage:
    raw = Path(path).read_bytes()
    magic, version, depth, lateral, code = _OCTB_HEADER.unpack_from(raw)
    if magic != OCTB_MAGIC or version != 1:
        raise ValidationError(f"{path}: not an OCTB v1 file")
    pixels = np.frombuffer(raw, dtype="<f4", offset=_OCTB_HEADER.size).reshape(depth, lateral)
    scale = {v: k for k, v in SCALE_CODES.items()}[code]
    return BScanImage(pixels.astype(np.float64), scale, {"source": str(path)})


def write_pgm(path: str | Path, pixels: np.ndarray) -> None:
    """8-bit binary PGM of an image already normalised to [0, 1]."""
    img = np.round(np.clip(pixels, 0.0, 1.0) * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise ValidationError(f"{path}: not a binary PGM")
    width, height = int(m.group(1)), int(m.group(2))
    return np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=m.end()).reshape(height, width)

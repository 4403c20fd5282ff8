"""Raster I/O: 8-bit gray/RGB PNG and binary PGM (P5). Masks are 0/255 PNGs."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .imagecore import check_gray, check_mask, to_gray

IMAGE_SUFFIXES = (".png", ".pgm")


class RasterError(ValueError):
    """Unreadable, unsupported or ill-shaped raster file."""


def read_raster(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode == "P":
                im = im.convert("RGB")
            if im.mode not in ("L", "RGB", "1"):
                raise RasterError(f"{path}: unsupported pixel mode {im.mode!r} (need 8-bit gray or RGB)")
            arr = np.asarray(im)
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise RasterError(f"{path}: {exc}") from exc
    if arr.dtype == bool:
        arr = arr.astype(np.uint8) * 255
    return arr


def read_gray(path) -> np.ndarray:
    try:
        return to_gray(read_raster(path))
    except ValueError as exc:
        raise RasterError(f"{path}: {exc}") from exc


def write_gray(path, g) -> None:
    g = check_gray(g)
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() == ".pgm" else "PNG"
    Image.fromarray(g, mode="L").save(path, format=fmt)


def read_mask(path, shape=None) -> np.ndarray:
    arr = read_raster(path)
    if arr.ndim != 2:
        raise RasterError(f"{path}: mask must be single-channel")
    if shape is not None and arr.shape != tuple(shape):
        raise RasterError(f"{path}: mask is {arr.shape[1]}x{arr.shape[0]}, expected {shape[1]}x{shape[0]}")
    return arr > 127


def write_mask(path, m) -> None:
    m = check_mask(m)
    Image.fromarray(np.where(m, 255, 0).astype(np.uint8), mode="L").save(path, format="PNG")


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory}: not a directory")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)

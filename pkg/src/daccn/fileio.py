"""PPM (8-bit RGB) and PFM (float depth) readers/writers, sample export."""

from __future__ import annotations

import os
import re

import numpy as np

from .errors import DimensionError


def write_ppm(path, image: np.ndarray) -> None:
    """Write a [3,H,W] image in [0,1] as binary P6 with maxval 255."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise DimensionError(f"expected [3,H,W] image, got {image.shape}")
    _, h, w = image.shape
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(pixels.transpose(1, 2, 0)).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 file (maxval 255) as a [3,H,W] float image in [0,1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if tokens is None:
        raise ValueError(f"{path}: not a binary PPM")
    w, h, maxval = (int(t) for t in tokens.groups())
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    body = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=tokens.end())
    return body.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def write_pfm(path, depth: np.ndarray) -> None:
    """Write a [H,W] or [1,H,W] map as little-endian grayscale PFM (rows bottom to top)."""
    depth = np.asarray(depth)
    if depth.ndim == 3 and depth.shape[0] == 1:
        depth = depth[0]
    if depth.ndim != 2:
        raise DimensionError(f"expected [H,W] depth, got {depth.shape}")
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(depth[::-1], dtype="<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM into a float32 [H,W] array (top row first)."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = re.match(rb"(Pf)\s+(\d+)\s+(\d+)\s+(\S+)\s", data)
    if tokens is None:
        raise ValueError(f"{path}: not a grayscale PFM")
    w, h = int(tokens.group(2)), int(tokens.group(3))
    scale = float(tokens.group(4))
    dtype = "<f4" if scale < 0 else ">f4"
    body = np.frombuffer(data, dtype=dtype, count=w * h, offset=tokens.end())
    return body.reshape(h, w)[::-1].astype(np.float32)


def export_sample(sample, directory, stem: str = "sample") -> list:
    """Write target/source PPMs and ground-truth depth PFM; returns the paths."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for name, img in [("target", sample.target)] + [
            (f"source{i}", s) for i, s in enumerate(sample.sources)]:
        p = os.path.join(directory, f"{stem}_{name}.ppm")
        write_ppm(p, img)
        paths.append(p)
    p = os.path.join(directory, f"{stem}_depth.pfm")
    write_pfm(p, sample.gt_depth)
    paths.append(p)
    return paths

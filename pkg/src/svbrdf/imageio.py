"""Image and material directory I/O.

PNG files hold 8-bit quantized maps: base color is stored with the sRGB
transfer applied, everything else (normals, roughness, metallic, rendered
linear images) is stored linearly.  PFM files hold lossless float32 data and
are preferred on load when present next to the PNGs.

Material directory layout::

    <dir>/basecolor.png   sRGB-encoded base color
    <dir>/normal.png      (n + 1) / 2 color-encoded normals
    <dir>/roughness.png   grayscale
    <dir>/metallic.png    grayscale
    <dir>/*.pfm           optional float32 variants of the same maps
"""

from __future__ import annotations

import logging
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .maps import SvbrdfMaps, decode_normal, encode_normal, linear_to_srgb, srgb_to_linear

log = logging.getLogger(__name__)

MAP_NAMES = ("basecolor", "normal", "roughness", "metallic")


def write_png(path, image, encoding="linear"):
    """Quantize a float image in [0, 1] to 8 bits and write it as PNG.

    Args:
        path: output file path.
        image: (H, W, 3) or (H, W, 1) or (H, W) float array.
        encoding: "linear" writes values as-is; "srgb" applies the sRGB
            transfer before quantization (for base color and LDR photos).
    """
    a = np.asarray(image, dtype=np.float32)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    if a.ndim not in (2, 3):
        raise ValueError(f"expected (H, W[, C]) image, got shape {a.shape}")
    if encoding == "srgb":
        a = linear_to_srgb(a)
    elif encoding != "linear":
        raise ValueError(f"unknown encoding {encoding!r}")
    q = np.clip(np.rint(np.clip(a, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q).save(Path(path))


def read_png(path, encoding="linear"):
    """Read an 8-bit PNG into a float32 array in [0, 1], shape (H, W, C).

    Grayscale files come back with a single channel; alpha is dropped.
    ``encoding="srgb"`` converts the stored values back to linear.
    """
    with Image.open(Path(path)) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if len(im.getbands()) > 2 else "L")
        a = np.asarray(im, dtype=np.float32) / 255.0
    if a.ndim == 2:
        a = a[..., None]
    if encoding == "srgb":
        a = srgb_to_linear(a).astype(np.float32)
    elif encoding != "linear":
        raise ValueError(f"unknown encoding {encoding!r}")
    return a


def write_pfm(path, image):
    """Write float32 data as a PFM file (little-endian, rows bottom-up)."""
    a = np.asarray(image, dtype=np.float32)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    if a.ndim == 2:
        header = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError(f"PFM supports (H, W) or (H, W, 3), got shape {a.shape}")
    h, w = a.shape[:2]
    with open(Path(path), "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")  # negative scale marks little-endian data
        f.write(np.ascontiguousarray(a[::-1]).astype("<f4").tobytes())


def read_pfm(path):
    """Read a PFM file into float32, shape (H, W, 3) for color or (H, W, 1)."""
    data = Path(path).read_bytes()
    m = re.match(rb"(P[Ff])\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s", data)
    if not m:
        raise ValueError(f"{path}: not a PFM file")
    color = m.group(1) == b"PF"
    w, h = int(m.group(2)), int(m.group(3))
    scale = float(m.group(4))
    payload = data[m.end():]
    count = w * h * (3 if color else 1)
    dtype = "<f4" if scale < 0 else ">f4"
    pixels = np.frombuffer(payload, dtype=dtype, count=count).astype(np.float32)
    if abs(scale) not in (0.0, 1.0):
        pixels = pixels * abs(scale)
    a = pixels.reshape(h, w, 3) if color else pixels.reshape(h, w, 1)
    return a[::-1].copy()  # rows are stored bottom-up


def save_material(directory, maps: SvbrdfMaps, float_maps=False):
    """Write a material's four maps into ``directory`` (created if missing).

    Args:
        float_maps: also write lossless ``*.pfm`` files next to the PNGs.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_png(d / "basecolor.png", maps.base_color, encoding="srgb")
    write_png(d / "normal.png", encode_normal(maps.normal), encoding="linear")
    write_png(d / "roughness.png", maps.roughness, encoding="linear")
    write_png(d / "metallic.png", maps.metallic, encoding="linear")
    if float_maps:
        write_pfm(d / "basecolor.pfm", maps.base_color)
        write_pfm(d / "normal.pfm", maps.normal)
        write_pfm(d / "roughness.pfm", maps.roughness)
        write_pfm(d / "metallic.pfm", maps.metallic)


def load_material(directory) -> SvbrdfMaps:
    """Load a material directory written by :func:`save_material`.

    PFM variants win over PNGs when both exist (lossless beats 8-bit).
    """
    d = Path(directory)
    missing = [n for n in MAP_NAMES if not (d / f"{n}.pfm").exists() and not (d / f"{n}.png").exists()]
    if missing:
        raise FileNotFoundError(f"{d}: missing material maps {missing}")

    def load(name, encoding):
        pfm = d / f"{name}.pfm"
        if pfm.exists():
            return read_pfm(pfm)
        return read_png(d / f"{name}.png", encoding=encoding)

    base = load("basecolor", "srgb")
    normal_rgb = load("normal", "linear")
    rough = load("roughness", "linear")
    metal = load("metallic", "linear")
    if (d / "normal.pfm").exists():
        # PFM normals are stored as raw vectors, not color-encoded.
        normal = normal_rgb
    else:
        normal = decode_normal(normal_rgb)
    return SvbrdfMaps.sanitized(base, normal, rough[..., :1], metal[..., :1])


def checkpoint_path(directory, name):
    """Canonical checkpoint file path inside a run directory."""
    return Path(directory) / f"{name}.ckpt"

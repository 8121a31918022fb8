"""SVBRDF parameter maps and the conversions between their encodings.

A material is stored as four per-pixel maps following the metallic workflow:
base color (linear RGB), surface normal (unit vectors in tangent space,
z up), scalar roughness and scalar metallic.  This module provides the
validated container type, sRGB transfer functions, the normal map codec and
the split of base color / metallic into the diffuse and specular albedos
consumed by the shading model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

# Specular reflectance of a smooth dielectric at normal incidence.
DIELECTRIC_SPECULAR = 0.04

# Tolerance for accepting stored normals as unit length.
NORMAL_UNIT_TOL = 1e-4

# Smallest z component kept when repairing decoded normals, so every normal
# stays strictly in the upper hemisphere.
MIN_NORMAL_Z = 1e-3

# Out-of-range slack absorbed silently by the constructor (quantization and
# float32 round-off); larger violations raise.
_RANGE_SLACK = 1e-5


def _as_float(a, name, channels):
    a = np.asarray(a, dtype=np.float64) if np.asarray(a).dtype == np.float64 else np.asarray(a, dtype=np.float32)
    if a.ndim != 3 or a.shape[2] != channels:
        raise ValueError(f"{name} must have shape (H, W, {channels}), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


@dataclass(frozen=True)
class SvbrdfMaps:
    """Validated per-pixel material parameters.

    Attributes:
        base_color: (H, W, 3) linear RGB reflectance in [0, 1].
        normal: (H, W, 3) unit tangent-space normals with z > 0.
        roughness: (H, W, 1) perceptual roughness in [0, 1].
        metallic: (H, W, 1) metalness in [0, 1].
    """

    base_color: np.ndarray
    normal: np.ndarray
    roughness: np.ndarray
    metallic: np.ndarray

    def __post_init__(self):
        b = _as_float(self.base_color, "base_color", 3)
        n = _as_float(self.normal, "normal", 3)
        r = _as_float(self.roughness, "roughness", 1)
        m = _as_float(self.metallic, "metallic", 1)
        shape = b.shape[:2]
        for name, a in (("normal", n), ("roughness", r), ("metallic", m)):
            if a.shape[:2] != shape:
                raise ValueError(f"{name} resolution {a.shape[:2]} does not match base_color {shape}")
        for name, a in (("base_color", b), ("roughness", r), ("metallic", m)):
            if a.min() < -_RANGE_SLACK or a.max() > 1.0 + _RANGE_SLACK:
                raise ValueError(f"{name} outside [0, 1]: range [{a.min():.6g}, {a.max():.6g}]")
        norms = np.linalg.norm(n, axis=-1)
        if np.abs(norms - 1.0).max() > NORMAL_UNIT_TOL:
            raise ValueError(f"normals not unit length (max |len-1| = {np.abs(norms - 1.0).max():.3g})")
        if n[..., 2].min() <= 0.0:
            raise ValueError("normals must point into the upper hemisphere (z > 0)")
        object.__setattr__(self, "base_color", np.clip(b, 0.0, 1.0))
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "roughness", np.clip(r, 0.0, 1.0))
        object.__setattr__(self, "metallic", np.clip(m, 0.0, 1.0))

    @property
    def resolution(self):
        """(height, width) in pixels."""
        return self.base_color.shape[:2]

    @classmethod
    def sanitized(cls, base_color, normal, roughness, metallic):
        """Build maps from unconstrained arrays, projecting onto the valid set.

        Colors/scalars are clamped to [0, 1]; normals are re-normalized after
        flipping any vector that points below the surface.  Use this for data
        coming from files or network outputs; construct directly otherwise.
        """
        b = np.clip(np.asarray(base_color, dtype=np.float32), 0.0, 1.0)
        r = np.clip(np.asarray(roughness, dtype=np.float32), 0.0, 1.0)
        m = np.clip(np.asarray(metallic, dtype=np.float32), 0.0, 1.0)
        n = np.asarray(normal, dtype=np.float32).copy()
        flipped = n[..., 2] < 0
        if flipped.any():
            n[flipped] *= -1.0
        n[..., 2] = np.maximum(n[..., 2], MIN_NORMAL_Z)
        n = n / np.maximum(np.linalg.norm(n, axis=-1, keepdims=True), 1e-12)
        return cls(b, n, r, m)

    def resized_half(self):
        """Box-downsample every map by 2x (resolution must be even)."""
        h, w = self.resolution
        if h % 2 or w % 2:
            raise ValueError(f"resolution {h}x{w} not divisible by 2")

        def half(a):
            c = a.shape[2]
            return a.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))

        return SvbrdfMaps.sanitized(half(self.base_color), half(self.normal),
                                    half(self.roughness), half(self.metallic))


@dataclass(frozen=True)
class DiffuseSpecularMaps:
    """Diffuse/specular albedo decomposition of a metallic-workflow material."""

    diffuse: np.ndarray   # (H, W, 3) linear diffuse albedo
    specular: np.ndarray  # (H, W, 3) linear specular reflectance at normal incidence


def pack_maps(maps: SvbrdfMaps):
    """Stack the four maps into one (8, H, W) float32 array.

    Channel layout: 0-2 base color, 3-5 normal, 6 roughness, 7 metallic —
    the network/loss tensor convention.
    """
    return np.concatenate([
        maps.base_color.transpose(2, 0, 1),
        maps.normal.transpose(2, 0, 1),
        maps.roughness.transpose(2, 0, 1),
        maps.metallic.transpose(2, 0, 1),
    ], axis=0).astype(np.float32)


def unpack_maps(arr) -> SvbrdfMaps:
    """Inverse of :func:`pack_maps`; accepts (8, H, W), projects onto validity."""
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[0] != 8:
        raise ValueError(f"expected (8, H, W), got {arr.shape}")
    return SvbrdfMaps.sanitized(
        arr[0:3].transpose(1, 2, 0),
        arr[3:6].transpose(1, 2, 0),
        arr[6:7].transpose(1, 2, 0),
        arr[7:8].transpose(1, 2, 0),
    )


def srgb_to_linear(c):
    """sRGB display values in [0, 1] -> linear radiometric values.

    Values outside [0, 1] are clamped first (with a log diagnostic), matching
    what an 8-bit decode can ever produce.
    """
    c = np.asarray(c, dtype=np.float64 if np.asarray(c).dtype == np.float64 else np.float32)
    if c.size and (c.min() < 0.0 or c.max() > 1.0):
        log.warning("srgb_to_linear: clamping input outside [0, 1] (range [%g, %g])", c.min(), c.max())
    c = np.clip(c, 0.0, 1.0)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c):
    """Linear radiometric values in [0, 1] -> sRGB display values."""
    c = np.asarray(c, dtype=np.float64 if np.asarray(c).dtype == np.float64 else np.float32)
    if c.size and (c.min() < 0.0 or c.max() > 1.0):
        log.warning("linear_to_srgb: clamping input outside [0, 1] (range [%g, %g])", c.min(), c.max())
    c = np.clip(c, 0.0, 1.0)
    return np.where(c <= 0.0031308, c * 12.92, 1.055 * c ** (1.0 / 2.4) - 0.055)


def split_metallic(base_color, metallic):
    """Base color + metallic -> (diffuse albedo, specular F0).

    diffuse  = base_color * (1 - metallic)
    specular = 0.04 * (1 - metallic) + base_color * metallic

    Works on any broadcast-compatible arrays; the metallic argument may have a
    trailing singleton channel.
    """
    b = np.asarray(base_color, dtype=np.float64 if np.asarray(base_color).dtype == np.float64 else np.float32)
    m = np.asarray(metallic, dtype=b.dtype)
    diffuse = b * (1.0 - m)
    specular = DIELECTRIC_SPECULAR * (1.0 - m) + b * m
    return diffuse, specular


def split_maps(maps: SvbrdfMaps) -> DiffuseSpecularMaps:
    """Split a material's base color / metallic into diffuse and specular maps."""
    d, s = split_metallic(maps.base_color, maps.metallic)
    return DiffuseSpecularMaps(diffuse=d, specular=s)


def decode_normal(rgb, repair=True):
    """Decode a normal map stored as colors: n = normalize(2 * rgb - 1).

    Args:
        rgb: (..., 3) values in [0, 1].
        repair: flip below-horizon vectors (z <= 0) back into the upper
            hemisphere and clamp z away from zero.  With ``repair=False`` an
            out-of-hemisphere vector raises instead.
    """
    rgb = np.asarray(rgb, dtype=np.float64 if np.asarray(rgb).dtype == np.float64 else np.float32)
    if rgb.shape[-1] != 3:
        raise ValueError(f"normal colors must have 3 channels, got shape {rgb.shape}")
    n = 2.0 * rgb - 1.0
    z = n[..., 2]
    if repair:
        bad = z < MIN_NORMAL_Z
        if bad.any():
            log.debug("decode_normal: repairing %d below-horizon normals", int(bad.sum()))
            n = n.copy()
            n[z < 0] *= -1.0
            n[..., 2] = np.maximum(n[..., 2], MIN_NORMAL_Z)
    elif (z <= 0).any():
        raise ValueError("normal map contains below-horizon vectors and repair=False")
    length = np.linalg.norm(n, axis=-1, keepdims=True)
    return n / np.maximum(length, 1e-12)


def encode_normal(n):
    """Unit normals -> color encoding rgb = (n + 1) / 2. Inverse of decode_normal."""
    n = np.asarray(n)
    length = np.linalg.norm(n, axis=-1)
    if np.abs(length - 1.0).max() > NORMAL_UNIT_TOL:
        raise ValueError(f"encode_normal expects unit vectors (max |len-1| = {np.abs(length - 1.0).max():.3g})")
    return (n + 1.0) * 0.5

"""Procedural material synthesis, augmentation, input rendering, and dataset
assembly.

Materials come from seeded procedural recipes (checkers, noise, stripes,
metal flakes, and blends of those) rather than an external texture corpus.
Each source material is cropped/rotated/scaled into several samples, and each
sample is rendered into flash-plus-environment input photographs with
jittered flash strength and color temperature, then auto-exposed to LDR.

Dataset layout on disk::

    out/<split>/<material_id>/<aug_idx>/
        input_<k>.png  basecolor.png  normal.png  roughness.png  metallic.png

plus a JSON-lines ``manifest.jsonl`` (one meta line, then one line per
augmented sample).
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates

from .exposure import auto_expose, luminance
from .imageio import read_pfm, save_material, write_png
from .maps import SvbrdfMaps, pack_maps
from .render import DirectionalLight, PointLight, SceneConfig, render_directional, render_point_light

log = logging.getLogger(__name__)

RECIPE_KINDS = ("checker", "fractal-noise", "stripes", "metal-flakes", "blend-of-two")

# knobs for the augmentation draw
SCALE_RANGE = (0.5, 1.0)
FREE_ROTATION_DEG = 45.0
N_AUGMENT = 7

N_ENV_LIGHTS = 16
TRAIN_ENV_POOL = 20
TEST_ENV_POOL = 6
TRAIN_RENDERS = 3
TEST_RENDERS = 1

FLASH_SCALE_RANGE = (0.5, 2.0)
KELVIN_RANGE = (4000.0, 8000.0)


# ---------------------------------------------------------------------------
# recipes and synthesis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaterialRecipe:
    """A seeded procedural material description (JSON-serializable)."""

    kind: str
    params: dict
    seed: int

    def __post_init__(self):
        if self.kind not in RECIPE_KINDS:
            raise ValueError(f"unknown recipe kind {self.kind!r}")

    def to_dict(self):
        return {"kind": self.kind, "params": self.params, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d["kind"], params=d["params"], seed=int(d["seed"]))


def _rand_color(rng, lo=0.05, hi=0.95):
    return [float(v) for v in rng.uniform(lo, hi, size=3)]


def _base_params(kind, rng):
    if kind == "checker":
        return {
            "cells": int(rng.integers(4, 13)),
            "color_a": _rand_color(rng),
            "color_b": _rand_color(rng),
            "rough_a": float(rng.uniform(0.15, 0.9)),
            "rough_b": float(rng.uniform(0.15, 0.9)),
            "metal_a": float(rng.choice([0.02, 0.9], p=[0.7, 0.3])),
            "metal_b": 0.02,
            "height_amp": float(rng.uniform(0.3, 2.0)),
        }
    if kind == "fractal-noise":
        return {
            "cells": int(rng.integers(3, 7)),
            "octaves": int(rng.integers(3, 6)),
            "color_a": _rand_color(rng),
            "color_b": _rand_color(rng),
            "rough_lo": float(rng.uniform(0.1, 0.5)),
            "rough_hi": float(rng.uniform(0.5, 0.95)),
            "metal": float(rng.choice([0.0, 0.05])),
            "height_amp": float(rng.uniform(0.5, 3.0)),
        }
    if kind == "stripes":
        return {
            "axis": int(rng.integers(0, 2)),
            "period": int(rng.integers(4, 17)),
            "phase": float(rng.uniform(0.0, 1.0)),
            "sharpness": float(rng.uniform(2.0, 8.0)),
            "color_a": _rand_color(rng),
            "color_b": _rand_color(rng),
            "rough_a": float(rng.uniform(0.15, 0.9)),
            "rough_b": float(rng.uniform(0.15, 0.9)),
            "height_amp": float(rng.uniform(0.3, 2.0)),
        }
    if kind == "metal-flakes":
        return {
            "n_flakes": int(rng.integers(30, 121)),
            "radius_lo": 0.01,
            "radius_hi": float(rng.uniform(0.02, 0.05)),
            "flake_color": _rand_color(rng, 0.5, 0.95),
            "flake_rough": float(rng.uniform(0.05, 0.35)),
            "back_color": _rand_color(rng, 0.05, 0.6),
            "back_rough": float(rng.uniform(0.4, 0.8)),
            "cells": int(rng.integers(3, 6)),
            "height_amp": float(rng.uniform(0.5, 2.0)),
        }
    raise ValueError(f"no parameter sampler for {kind!r}")


def random_recipe(rng) -> MaterialRecipe:
    """Draw a recipe with plausible, JSON-native parameters."""
    kind = str(rng.choice(RECIPE_KINDS))
    seed = int(rng.integers(0, 2**31 - 1))
    if kind != "blend-of-two":
        return MaterialRecipe(kind, _base_params(kind, rng), seed)
    inner = [str(k) for k in rng.choice(RECIPE_KINDS[:-1], size=2, replace=True)]
    params = {
        "first": {"kind": inner[0], "params": _base_params(inner[0], rng),
                  "seed": int(rng.integers(0, 2**31 - 1))},
        "second": {"kind": inner[1], "params": _base_params(inner[1], rng),
                   "seed": int(rng.integers(0, 2**31 - 1))},
        "mask_cells": int(rng.integers(2, 5)),
        "mask_softness": float(rng.uniform(0.05, 0.25)),
    }
    return MaterialRecipe(kind, params, seed)


def _value_noise(rng, res, cells, octaves=1, gain=0.5):
    """Periodic smooth noise in [0, 1]: cubic-interpolated random lattices."""
    total = np.zeros((res, res))
    amp, norm = 1.0, 0.0
    for k in range(octaves):
        c = cells * (2 ** k)
        grid = rng.uniform(0.0, 1.0, size=(c, c))
        u = (np.arange(res) + 0.5) / res * c - 0.5
        ui, uj = np.meshgrid(u, u, indexing="ij")
        layer = map_coordinates(grid, [ui, uj], order=3, mode="grid-wrap")
        total += amp * layer
        norm += amp
        amp *= gain
    total /= norm
    lo, hi = total.min(), total.max()
    return (total - lo) / max(hi - lo, 1e-9)


def derive_normals(height, texel_size):
    """Normals of the surface z = height(x, y) from central differences.

    ``height`` and ``texel_size`` share units.  Image row index runs along
    -y (world), column index along +x.
    """
    g_i, g_j = np.gradient(np.asarray(height, dtype=np.float64))
    n = np.stack([-g_j, g_i, np.full_like(g_i, texel_size)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _synth_fields(kind, params, seed, res):
    """Raw (base, height, rough, metal) fields; height in texel-size units."""
    rng = np.random.default_rng(seed)
    p = params
    if kind == "checker":
        idx = (np.arange(res) * p["cells"]) // res
        mask = ((idx[:, None] + idx[None, :]) % 2).astype(np.float64)
        base = np.where(mask[..., None] > 0.5, p["color_a"], p["color_b"])
        rough = np.where(mask, p["rough_a"], p["rough_b"])
        metal = np.where(mask, p["metal_a"], p["metal_b"])
        height = mask * p["height_amp"]
        return base, height, rough, metal
    if kind == "fractal-noise":
        n1 = _value_noise(rng, res, p["cells"], octaves=p["octaves"])
        n2 = _value_noise(rng, res, p["cells"], octaves=max(p["octaves"] - 1, 1))
        base = np.asarray(p["color_a"]) + (np.asarray(p["color_b"]) - np.asarray(p["color_a"])) * n1[..., None]
        rough = p["rough_lo"] + (p["rough_hi"] - p["rough_lo"]) * n2
        metal = np.full((res, res), p["metal"])
        height = n1 * p["height_amp"]
        return base, height, rough, metal
    if kind == "stripes":
        coord = (np.arange(res) + 0.5) / res
        wave = np.sin(2.0 * np.pi * (coord * p["period"] + p["phase"]))
        soft = 0.5 + 0.5 * np.tanh(wave * p["sharpness"])
        soft = soft[:, None] if p["axis"] == 0 else soft[None, :]
        soft = np.broadcast_to(soft, (res, res)).copy()
        base = np.asarray(p["color_a"]) * soft[..., None] + np.asarray(p["color_b"]) * (1.0 - soft[..., None])
        rough = p["rough_a"] * soft + p["rough_b"] * (1.0 - soft)
        metal = np.full((res, res), 0.02)
        height = soft * p["height_amp"]
        return base, height, rough, metal
    if kind == "metal-flakes":
        back = _value_noise(rng, res, p["cells"], octaves=3)
        base = np.asarray(p["back_color"]) * (0.7 + 0.3 * back[..., None])
        rough = np.full((res, res), p["back_rough"])
        metal = np.full((res, res), 0.02)
        height = back * 0.3 * p["height_amp"]
        ii, jj = np.meshgrid(np.arange(res), np.arange(res), indexing="ij")
        for _ in range(p["n_flakes"]):
            r = rng.uniform(p["radius_lo"], p["radius_hi"]) * res
            ci, cj = rng.uniform(0, res, size=2)
            lo_i, hi_i = max(int(ci - r - 2), 0), min(int(ci + r + 3), res)
            lo_j, hi_j = max(int(cj - r - 2), 0), min(int(cj + r + 3), res)
            if lo_i >= hi_i or lo_j >= hi_j:
                continue
            d2 = ((ii[lo_i:hi_i, lo_j:hi_j] - ci) ** 2 + (jj[lo_i:hi_i, lo_j:hi_j] - cj) ** 2)
            blob = np.exp(-d2 / max(r * r * 0.5, 1e-9))
            inside = blob > 0.37  # within ~one radius of the center
            patch = (slice(lo_i, hi_i), slice(lo_j, hi_j))
            metal[patch][inside] = 0.95
            rough[patch][inside] = p["flake_rough"]
            base[patch][inside] = p["flake_color"]
            height[patch] += blob * p["height_amp"]
        return base, height, rough, metal
    if kind == "blend-of-two":
        b1, h1, r1, m1 = _synth_fields(p["first"]["kind"], p["first"]["params"], p["first"]["seed"], res)
        b2, h2, r2, m2 = _synth_fields(p["second"]["kind"], p["second"]["params"], p["second"]["seed"], res)
        noise = _value_noise(rng, res, p["mask_cells"], octaves=2)
        w = _smoothstep((noise - 0.5) / max(p["mask_softness"], 1e-6) + 0.5)
        return (b1 * w[..., None] + b2 * (1.0 - w[..., None]),
                h1 * w + h2 * (1.0 - w),
                r1 * w + r2 * (1.0 - w),
                m1 * w + m2 * (1.0 - w))
    raise ValueError(f"unknown recipe kind {kind!r}")


def synthesize_material(recipe: MaterialRecipe, resolution=1024) -> SvbrdfMaps:
    """Deterministically synthesize source-resolution maps from a recipe.

    Normals come from a procedural height field via central-difference
    gradients; heights are expressed in texel units, so surface relief is
    resolution-independent.
    """
    if resolution < 8:
        raise ValueError("resolution too small")
    base, height, rough, metal = _synth_fields(recipe.kind, recipe.params, recipe.seed, resolution)
    normal = derive_normals(height, texel_size=1.0)
    return SvbrdfMaps.sanitized(base, normal, rough[..., None], metal[..., None])


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentParams:
    """One crop/rotate/scale draw, replayable and JSON-serializable.

    ``scale`` is the axis-aligned crop size as a fraction of the source edge;
    ``crop_x``/``crop_y`` are the crop's top-left corner in source texels;
    rotation is ``rotation_deg`` plus 90° per quarter turn, counterclockwise
    in world coordinates (+x right, +y up).
    """

    quarter_turns: int
    rotation_deg: float
    scale: float
    crop_x: int
    crop_y: int

    def __post_init__(self):
        if self.quarter_turns not in (0, 1, 2, 3):
            raise ValueError("quarter_turns must be in {0,1,2,3}")
        if not SCALE_RANGE[0] - 1e-9 <= self.scale <= SCALE_RANGE[1] + 1e-9:
            raise ValueError(f"scale {self.scale} outside {SCALE_RANGE}")
        if self.crop_x < 0 or self.crop_y < 0:
            raise ValueError("crop offsets must be non-negative")

    def to_dict(self):
        return {"quarter_turns": self.quarter_turns, "rotation_deg": self.rotation_deg,
                "scale": self.scale, "crop_x": self.crop_x, "crop_y": self.crop_y}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["quarter_turns"]), float(d["rotation_deg"]), float(d["scale"]),
                   int(d["crop_x"]), int(d["crop_y"]))


def apply_augmentation(maps: SvbrdfMaps, params: AugmentParams, target_res) -> SvbrdfMaps:
    """Resample one crop/rotate/scale of ``maps`` to ``target_res``.

    All eight channels are bilinearly sampled through a single affine map
    (reflection fill outside the source); normal xy components are then
    rotated by the total rotation angle and renormalized so they stay
    consistent with the rotated content.
    """
    src_h, src_w = maps.resolution
    if src_h != src_w:
        raise ValueError("augmentation expects square source maps")
    size = src_h
    crop = params.scale * size
    if params.crop_x + crop > size + 1e-6 or params.crop_y + crop > size + 1e-6:
        raise ValueError("crop exceeds source bounds")

    theta = np.deg2rad(params.rotation_deg) + params.quarter_turns * (np.pi / 2.0)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    t = int(target_res)
    d = np.arange(t) - (t - 1) / 2.0
    dy, dx = np.meshgrid(d, d, indexing="ij")
    step = crop / t
    center_i = params.crop_y + (crop - 1.0) / 2.0
    center_j = params.crop_x + (crop - 1.0) / 2.0
    src_j = center_j + step * (cos_t * dx - sin_t * dy)
    src_i = center_i + step * (sin_t * dx + cos_t * dy)

    packed = pack_maps(maps).astype(np.float64)  # (8, H, W)
    out = np.empty((8, t, t))
    for c in range(8):
        out[c] = map_coordinates(packed[c], [src_i, src_j], order=1, mode="reflect")

    nx = cos_t * out[3] - sin_t * out[4]
    ny = sin_t * out[3] + cos_t * out[4]
    normal = np.stack([nx, ny, out[5]], axis=-1)
    base = np.moveaxis(out[0:3], 0, -1)
    return SvbrdfMaps.sanitized(base, normal, out[6][..., None], out[7][..., None])


def augment(maps: SvbrdfMaps, rng, n=N_AUGMENT, target_res=512):
    """Draw ``n`` augmented samples; returns ``[(maps, params), ...]``.

    Crops whose axis-aligned rect falls outside the source are resampled.
    """
    size = maps.resolution[0]
    if SCALE_RANGE[0] * size < target_res - 1e-9:
        raise ValueError(f"source {size} too small for target {target_res} at min scale {SCALE_RANGE[0]}")
    out = []
    for _ in range(n):
        while True:
            scale = float(rng.uniform(*SCALE_RANGE))
            crop = scale * size
            crop_x = int(rng.integers(0, size))
            crop_y = int(rng.integers(0, size))
            if crop_x + crop <= size and crop_y + crop <= size:
                break
        params = AugmentParams(
            quarter_turns=int(rng.integers(0, 4)),
            rotation_deg=float(rng.uniform(-FREE_ROTATION_DEG, FREE_ROTATION_DEG)),
            scale=scale, crop_x=crop_x, crop_y=crop_y)
        out.append((apply_augmentation(maps, params, target_res), params))
    return out


# ---------------------------------------------------------------------------
# environment lighting and input rendering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Environment:
    """Distant illumination approximated by a small set of directional lights."""

    name: str
    directions: np.ndarray  # (M, 3) unit vectors toward the lights
    colors: np.ndarray      # (M, 3) per-light irradiance

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=np.float64)
        c = np.asarray(self.colors, dtype=np.float64)
        if d.ndim != 2 or d.shape[1] != 3 or c.shape != d.shape:
            raise ValueError("directions/colors must be matching (M, 3) arrays")
        lengths = np.linalg.norm(d, axis=1)
        if np.abs(lengths - 1.0).max() > 1e-6:
            raise ValueError("directions must be unit vectors")
        if c.min() < 0.0:
            raise ValueError("colors must be non-negative")
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "colors", c)

    def rotated(self, angle_rad) -> "Environment":
        """The same lights rotated about the world z axis."""
        c, s = np.cos(angle_rad), np.sin(angle_rad)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return Environment(self.name, self.directions @ rot.T, self.colors)

    @classmethod
    def from_pfm(cls, path, n_lights=N_ENV_LIGHTS, seed=0):
        """Importance-sample directional lights from an equirectangular map.

        Rows span polar angle [0, pi] top-down, columns span azimuth
        [0, 2pi).  Only the upper hemisphere (z > 0) can light the patch, so
        sampling is restricted to it; each light's color is scaled so the
        expected summed irradiance matches the hemisphere integral.
        """
        img = read_pfm(path)
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=2)
        h, w = img.shape[:2]
        rows = h // 2  # upper hemisphere only
        theta = (np.arange(rows) + 0.5) / h * np.pi
        phi = (np.arange(w) + 0.5) / w * 2.0 * np.pi
        lum = np.maximum(luminance(img[:rows]), 0.0)
        d_omega = np.sin(theta)[:, None] * (np.pi / h) * (2.0 * np.pi / w)
        weight = (lum * d_omega).ravel()
        total = weight.sum()
        if total <= 0.0:
            raise ValueError(f"environment {path} has no energy in the upper hemisphere")
        rng = np.random.default_rng(seed)
        idx = rng.choice(weight.size, size=n_lights, p=weight / total)
        ti, pj = np.unravel_index(idx, (rows, w))
        st, ct = np.sin(theta[ti]), np.cos(theta[ti])
        dirs = np.stack([st * np.cos(phi[pj]), st * np.sin(phi[pj]), ct], axis=-1)
        rgb = img[:rows].reshape(-1, 3)[idx].astype(np.float64)
        pix_lum = np.maximum(lum.ravel()[idx], 1e-12)
        colors = rgb / pix_lum[:, None] * (total / n_lights)
        return cls(Path(path).stem, dirs, colors)

    @classmethod
    def analytic_sky(cls, name, seed, n_lights=N_ENV_LIGHTS):
        """A fallback sky: hemispherical gradient lights plus one sun."""
        rng = np.random.default_rng(seed)
        zenith = np.array([0.35, 0.45, 0.75]) * rng.uniform(0.5, 1.5)
        horizon = np.array([0.75, 0.60, 0.45]) * rng.uniform(0.5, 1.5)
        m_sky = n_lights - 1
        z = (np.arange(m_sky) + rng.uniform(0.05, 0.95, size=m_sky)) / m_sky
        z = np.clip(z, 0.05, 0.999)
        phi = rng.uniform(0.0, 2.0 * np.pi, size=m_sky)
        r = np.sqrt(1.0 - z * z)
        dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
        sky_total = rng.uniform(1.0, 3.0)
        colors = (horizon[None] + (zenith - horizon)[None] * z[:, None]) * (sky_total / m_sky)
        sun_z = rng.uniform(0.3, 0.9)
        sun_phi = rng.uniform(0.0, 2.0 * np.pi)
        sun_r = np.sqrt(1.0 - sun_z * sun_z)
        sun_dir = np.array([sun_r * np.cos(sun_phi), sun_r * np.sin(sun_phi), sun_z])
        sun_col = np.array([1.0, 0.9, 0.75]) * rng.uniform(0.5, 4.0)
        return cls(name,
                   np.concatenate([dirs, sun_dir[None]], axis=0),
                   np.concatenate([colors, sun_col[None]], axis=0))


def load_environment_pool(env_dir, count, seed, prefix, skip=0):
    """``count`` environments from PFM files in ``env_dir``, analytic fill-in.

    Files are taken in sorted order after skipping the first ``skip`` (so two
    pools drawn from one directory stay disjoint); missing files or a missing
    directory fall back to seeded analytic skies with a logged diagnostic.
    """
    envs = []
    files = []
    if env_dir is not None:
        d = Path(env_dir)
        if d.is_dir():
            files = sorted(d.glob("*.pfm"))[skip:]
        else:
            log.warning("environment directory %s missing; using analytic skies", env_dir)
    for i in range(count):
        if i < len(files):
            try:
                envs.append(Environment.from_pfm(files[i], seed=seed + i))
                continue
            except (OSError, ValueError) as exc:
                log.warning("environment %s unusable (%s); analytic sky fallback", files[i], exc)
        envs.append(Environment.analytic_sky(f"{prefix}-{i:02d}", seed + i))
    return envs


def kelvin_to_rgb(kelvin):
    """Approximate linear RGB of a blackbody, normalized to unit mean."""
    t = np.clip(kelvin, 1000.0, 15000.0) / 100.0
    if t <= 66.0:
        r = 255.0
        g = 99.4708025861 * np.log(t) - 161.1195681661
    else:
        r = 329.698727446 * (t - 60.0) ** -0.1332047592
        g = 288.1221695283 * (t - 60.0) ** -0.0755148492
    if t >= 66.0:
        b = 255.0
    elif t <= 19.0:
        b = 0.0
    else:
        b = 138.5177312231 * np.log(t - 10.0) - 305.0447927307
    rgb = np.clip(np.array([r, g, b]), 0.0, 255.0) / 255.0
    return rgb / max(rgb.mean(), 1e-9)


def render_input(maps: SvbrdfMaps, env, rng, cfg: SceneConfig = SceneConfig()):
    """One LDR input photograph: jittered flash plus environment light.

    Returns ``(image, record)`` where ``record`` documents the draw (env
    name/rotation, flash strength, color temperature, applied EV100).
    ``env=None`` renders flash only.
    """
    flash_scale = float(rng.uniform(*FLASH_SCALE_RANGE))
    kelvin = float(rng.uniform(*KELVIN_RANGE))
    color = np.asarray(cfg.flash_color, dtype=np.float64) * cfg.flash_intensity
    flash = PointLight(cfg.camera_position, color * flash_scale * kelvin_to_rgb(kelvin))
    hdr = render_point_light(maps, flash, cfg.camera_position, cfg)
    rotation = float(rng.uniform(0.0, 2.0 * np.pi))
    if env is not None:
        for direction, light_color in zip(*_rotated_lights(env, rotation)):
            if direction[2] <= 0.0:
                continue
            hdr = hdr + render_directional(maps, DirectionalLight(direction, light_color),
                                           cfg.camera_position, cfg)
    ldr, ev = auto_expose(hdr, return_ev=True)
    record = {
        "env": env.name if env is not None else None,
        "env_rotation_deg": float(np.rad2deg(rotation)),
        "flash_scale": flash_scale,
        "kelvin": kelvin,
        "ev100": float(ev),
    }
    return ldr, record


def _rotated_lights(env: Environment, angle):
    rotated = env.rotated(angle)
    return rotated.directions, rotated.colors


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------

@dataclass
class DatasetManifest:
    """JSON-lines manifest: one meta record plus one record per sample."""

    meta: dict
    records: list = field(default_factory=list)

    def __post_init__(self):
        train = {r["material_id"] for r in self.records if r["split"] == "train"}
        test = {r["material_id"] for r in self.records if r["split"] == "test"}
        leaked = train & test
        if leaked:
            raise ValueError(f"materials in both splits: {sorted(leaked)}")

    def split_records(self, split):
        return [r for r in self.records if r["split"] == split]

    def material_ids(self, split):
        return sorted({r["material_id"] for r in self.split_records(split)})

    def input_count(self, split):
        return sum(len(r["inputs"]) for r in self.split_records(split))

    def save(self, path):
        lines = [json.dumps({"kind": "meta", **self.meta}, sort_keys=True)]
        lines += [json.dumps(r, sort_keys=True) for r in self.records]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
        if not lines:
            raise ValueError(f"empty manifest {path}")
        meta = json.loads(lines[0])
        if meta.pop("kind", None) != "meta":
            raise ValueError(f"manifest {path} does not start with a meta record")
        return cls(meta=meta, records=[json.loads(ln) for ln in lines[1:]])


def _worker_count(threads=None):
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("SVBRDF_THREADS")
    if env:
        return max(1, int(env))
    return min(os.cpu_count() or 1, 8)


def build_dataset(n_materials, out_dir, seed=0, resolution=512, source_resolution=None,
                  env_dir=None, threads=None, cfg: SceneConfig = SceneConfig()) -> DatasetManifest:
    """Generate, split, augment, render, and index a dataset.

    Materials are split 80:20 by material id before augmentation; every
    material yields 7 augmented samples; train samples are rendered 3 times
    with draws from a 20-environment pool, test samples once from a disjoint
    6-environment pool.  Per-material seeds make the result independent of
    thread scheduling.
    """
    if n_materials < 2:
        raise ValueError("need at least 2 materials for a train/test split")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    src_res = int(source_resolution) if source_resolution else 2 * int(resolution)
    if SCALE_RANGE[0] * src_res < resolution:
        raise ValueError(f"source resolution {src_res} too small for {resolution} targets")

    train_envs = load_environment_pool(env_dir, TRAIN_ENV_POOL, seed + 1000, "sky-train")
    test_envs = load_environment_pool(env_dir, TEST_ENV_POOL, seed + 2000, "sky-test",
                                      skip=TRAIN_ENV_POOL)
    overlap = {e.name for e in train_envs} & {e.name for e in test_envs}
    if env_dir is not None and overlap:
        raise ValueError(f"environment pools must be disjoint, shared: {sorted(overlap)}")

    n_train = min(n_materials - 1, max(1, int(round(n_materials * 0.8))))

    def build_one(index):
        rng = np.random.default_rng(seed + index)
        split = "train" if index < n_train else "test"
        material_id = f"m{index:04d}"
        recipe = random_recipe(rng)
        source = synthesize_material(recipe, src_res)
        samples = augment(source, rng, n=N_AUGMENT, target_res=resolution)
        envs = train_envs if split == "train" else test_envs
        n_inputs = TRAIN_RENDERS if split == "train" else TEST_RENDERS
        recs = []
        for aug_idx, (maps, aug_params) in enumerate(samples):
            rel = Path(split) / material_id / str(aug_idx)
            sample_dir = out / rel
            sample_dir.mkdir(parents=True, exist_ok=True)
            save_material(sample_dir, maps)
            renders, inputs = [], []
            for k in range(n_inputs):
                env = envs[int(rng.integers(0, len(envs)))]
                ldr, record = render_input(maps, env, rng, cfg)
                name = f"input_{k}.png"
                write_png(sample_dir / name, ldr, encoding="linear")
                renders.append(record)
                inputs.append(str(rel / name))
            recs.append({
                "material_id": material_id,
                "split": split,
                "aug_idx": aug_idx,
                "recipe": recipe.to_dict(),
                "augment": aug_params.to_dict(),
                "renders": renders,
                "inputs": inputs,
                "maps": {n: str(rel / f"{n}.png") for n in ("basecolor", "normal", "roughness", "metallic")},
            })
        return recs

    records = []
    with ThreadPoolExecutor(max_workers=_worker_count(threads)) as pool:
        for recs in pool.map(build_one, range(n_materials)):
            records.extend(recs)
    records.sort(key=lambda r: (r["material_id"], r["aug_idx"]))

    manifest = DatasetManifest(
        meta={"seed": int(seed), "n_materials": int(n_materials), "resolution": int(resolution),
              "source_resolution": src_res, "n_augment": N_AUGMENT,
              "train_renders": TRAIN_RENDERS, "test_renders": TEST_RENDERS},
        records=records)
    manifest.save(out / "manifest.jsonl")
    return manifest

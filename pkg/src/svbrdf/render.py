"""Differentiable rendering of a textured plane under point lights.

The scene is a desk-capture setup: a square material patch lies in the z=0
plane centered at the origin, the camera looks straight down from
``(0, 0, camera_height_m)``, and a point light illuminates the patch.  In
flash mode the light sits at the camera position (collocated flash).

Pixel (i, j) of an HxW rendering maps to the plane point

    x = (j + 0.5) / W * ps - ps / 2
    y = ps / 2 - (i + 0.5) / H * ps          (row 0 is +y, i.e. "up")

so every rendered pixel is aligned with the same texel of the parameter maps.
Radiance uses inverse-square falloff:

    L = f(wi, wo) * (n . wi) * color / r^2

Outputs are linear HDR; tone mapping / exposure live elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .maps import SvbrdfMaps
from .shading import brdf_eval, brdf_eval_grad

# Distance (and squared distance) floors so lights sitting on the surface
# cannot blow up the inverse-square term.
MIN_LIGHT_DIST = 1e-4


@dataclass(frozen=True)
class SceneConfig:
    """Geometry and flash parameters of the capture rig."""

    patch_size_m: float = 0.30
    camera_height_m: float = 0.50
    fov_deg: float = 45.0
    flash_color: tuple = (1.0, 1.0, 1.0)
    flash_intensity: float = 1.0

    def __post_init__(self):
        if self.patch_size_m <= 0.0 or self.camera_height_m <= 0.0:
            raise ValueError("patch size and camera height must be positive")
        if not 10.0 <= self.fov_deg <= 120.0:
            raise ValueError(f"fov {self.fov_deg} outside the supported [10, 120] degrees")
        half_extent = self.camera_height_m * np.tan(np.radians(self.fov_deg) / 2.0)
        if self.patch_size_m / 2.0 > half_extent + 1e-9:
            raise ValueError("patch does not fit inside the camera frustum")

    @property
    def camera_position(self):
        return np.array([0.0, 0.0, self.camera_height_m])

    @property
    def flash_light(self):
        c = np.asarray(self.flash_color, dtype=np.float64) * self.flash_intensity
        return PointLight(self.camera_position, c)


@dataclass(frozen=True)
class PointLight:
    """Isotropic point light with linear RGB intensity."""

    position: np.ndarray  # (3,)
    color: np.ndarray     # (3,)

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64)
        c = np.asarray(self.color, dtype=np.float64)
        if p.shape != (3,) or c.shape != (3,):
            raise ValueError("light position and color must be 3-vectors")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(c))):
            raise ValueError("non-finite light")
        if c.min() < 0.0:
            raise ValueError("light color must be non-negative")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "color", c)


@dataclass(frozen=True)
class DirectionalLight:
    """Infinitely distant light: one incident direction, constant irradiance.

    ``direction`` points from the surface toward the light; ``color`` is the
    irradiance on a surface facing the light head-on.
    """

    direction: np.ndarray  # (3,) unit
    color: np.ndarray      # (3,)

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        c = np.asarray(self.color, dtype=np.float64)
        if d.shape != (3,) or c.shape != (3,):
            raise ValueError("light direction and color must be 3-vectors")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(c))):
            raise ValueError("non-finite light")
        norm = np.linalg.norm(d)
        if norm < 1e-9:
            raise ValueError("light direction must be nonzero")
        if c.min() < 0.0:
            raise ValueError("light color must be non-negative")
        object.__setattr__(self, "direction", d / norm)
        object.__setattr__(self, "color", c)


def plane_positions(height, width, cfg: SceneConfig):
    """World positions of the texel centers, shape (H, W, 3), z = 0."""
    ps = cfg.patch_size_m
    xs = (np.arange(width) + 0.5) / width * ps - ps / 2.0
    ys = ps / 2.0 - (np.arange(height) + 0.5) / height * ps
    x, y = np.meshgrid(xs, ys)
    return np.stack([x, y, np.zeros_like(x)], axis=-1)


def _directions(points, target):
    """Unit vectors from surface points toward ``target``, plus distances."""
    d = target - points
    r = np.maximum(np.linalg.norm(d, axis=-1, keepdims=True), MIN_LIGHT_DIST)
    return d / r, r[..., 0]


def render_point_light(maps: SvbrdfMaps, light: PointLight, view_position, cfg: SceneConfig = SceneConfig()):
    """Render the patch for one point light and one viewpoint.

    Returns a linear HDR image (H, W, 3), float64.
    """
    img, _ = _render_core(maps.base_color, maps.normal, maps.roughness[..., 0],
                          maps.metallic[..., 0], light, np.asarray(view_position, dtype=np.float64),
                          cfg, want_grad=False)
    return img


def render_flash(maps: SvbrdfMaps, cfg: SceneConfig = SceneConfig()):
    """Render with the flash collocated at the camera (the capture input)."""
    return render_point_light(maps, cfg.flash_light, cfg.camera_position, cfg)


def render_directional(maps: SvbrdfMaps, light: DirectionalLight, view_position,
                       cfg: SceneConfig = SceneConfig()):
    """Render the patch under a constant-direction light (no distance falloff).

    Used to approximate environment illumination as a sum of distant lights.
    Directions at or below the horizon contribute nothing.
    """
    h, w = maps.resolution
    points = plane_positions(h, w, cfg)
    w_i = np.broadcast_to(light.direction, points.shape)
    w_o, _ = _directions(points, np.asarray(view_position, dtype=np.float64))
    f = brdf_eval(maps.base_color, maps.normal, maps.roughness[..., 0],
                  maps.metallic[..., 0], w_i, w_o)
    cos_i = np.maximum(np.sum(maps.normal * w_i, axis=-1), 0.0)
    return f * cos_i[..., None] * light.color


def render_vjp(maps: SvbrdfMaps, light: PointLight, view_position, upstream, cfg: SceneConfig = SceneConfig()):
    """Vector-Jacobian product of :func:`render_point_light`.

    Args:
        upstream: (H, W, 3) cotangent of the rendered image.

    Returns:
        dict with gradient arrays ``base_color`` (H, W, 3), ``normal`` (H, W, 3),
        ``roughness`` (H, W, 1), ``metallic`` (H, W, 1).
    """
    _, jac = _render_core(maps.base_color, maps.normal, maps.roughness[..., 0],
                          maps.metallic[..., 0], light, np.asarray(view_position, dtype=np.float64),
                          cfg, want_grad=True)
    g = np.einsum("hwc,hwck->hwk", np.asarray(upstream, dtype=np.float64), jac)
    return {
        "base_color": g[..., 0:3],
        "normal": g[..., 3:6],
        "roughness": g[..., 6:7],
        "metallic": g[..., 7:8],
    }


def render_params_grad(base, normal, rough, metal, light: PointLight, view_position, cfg: SceneConfig):
    """Image plus full per-pixel Jacobian (H, W, 3, 8) for batched training."""
    return _render_core(base, normal, rough, metal, light,
                        np.asarray(view_position, dtype=np.float64), cfg, want_grad=True)


def render_params(base, normal, rough, metal, light: PointLight, view_position, cfg: SceneConfig):
    """Forward-only render of raw parameter arrays (no Jacobian)."""
    img, _ = _render_core(base, normal, rough, metal, light,
                          np.asarray(view_position, dtype=np.float64), cfg, want_grad=False)
    return img


def _render_core(base, normal, rough, metal, light: PointLight, view_position, cfg, want_grad):
    h, w = base.shape[:2]
    points = plane_positions(h, w, cfg)
    w_i, r_i = _directions(points, light.position)
    w_o, _ = _directions(points, view_position)

    falloff = (light.color / (r_i * r_i)[..., None])  # (H, W, 3)

    if not want_grad:
        f = brdf_eval(base, normal, rough, metal, w_i, w_o)
        cos_i = np.maximum(np.sum(normal * w_i, axis=-1), 0.0)
        return f * cos_i[..., None] * falloff, None

    f, jac_f = brdf_eval_grad(base, normal, rough, metal, w_i, w_o)
    cos_i = np.sum(normal * w_i, axis=-1)
    live = cos_i > 0.0
    cos_c = np.where(live, cos_i, 0.0)

    img = f * cos_c[..., None] * falloff

    # L_c = falloff_c * f_c * cos_i: product rule; cos_i depends on the normal
    # (columns 3:6) with gradient w_i.
    jac = jac_f * cos_c[..., None, None]
    jac[..., :, 3:6] += np.where(live, 1.0, 0.0)[..., None, None] * f[..., :, None] * w_i[..., None, :]
    jac = jac * falloff[..., :, None]
    return img, jac


def sample_loss_views(rng, count=10, cfg: SceneConfig = SceneConfig()):
    """Sample light/view pairs for the rendering loss.

    The first ``count // 2`` pairs use independent uniform upper-hemisphere
    directions for the light and the view (distance 2x the patch size from
    the patch center).  The remaining pairs guarantee a visible specular
    highlight: a surface point q on the patch and one direction are sampled,
    the light sits along that direction from q and the view along its mirror
    about the plane normal.  Light colors are uniform in [0.5, 1.5] per
    channel.

    Returns a list of ``(PointLight, view_position)`` tuples.
    """
    if count < 2 or count % 2:
        raise ValueError(f"count must be even and >= 2, got {count}")
    radius = 2.0 * cfg.patch_size_m
    views = []

    def hemi_dir():
        z = rng.uniform(0.0, 1.0)
        phi = rng.uniform(0.0, 2.0 * np.pi)
        s = np.sqrt(max(1.0 - z * z, 0.0))
        return np.array([s * np.cos(phi), s * np.sin(phi), z])

    def color():
        return rng.uniform(0.5, 1.5, size=3)

    for _ in range(count // 2):
        light_pos = radius * hemi_dir()
        view_pos = radius * hemi_dir()
        views.append((PointLight(light_pos, color()), view_pos))

    half = cfg.patch_size_m / 2.0
    for _ in range(count - count // 2):
        q = np.array([rng.uniform(-half, half), rng.uniform(-half, half), 0.0])
        d = hemi_dir()
        mirror = np.array([-d[0], -d[1], d[2]])
        views.append((PointLight(q + radius * d, color()), q + radius * mirror))
    return views


def log_tonemap(img):
    """Compressive log(1 + x) tone map applied before image-space losses."""
    img = np.asarray(img)
    if img.size and img.min() < 0.0:
        raise ValueError("tone map input must be non-negative")
    return np.log1p(img)

"""Microfacet BRDF evaluation and its analytic parameter gradients.

The reflectance model is a Cook-Torrance specular lobe (GGX distribution,
Schlick Fresnel, separable Smith shadowing) on top of a retro-reflection
aware diffuse lobe, parameterized by the metallic workflow:

    diffuse   = base_color * (1 - metallic)
    specular0 = 0.04 * (1 - metallic) + base_color * metallic

    f = D * F * G / (4 (n.wo)(n.wi))  +  diffuse / pi * fd(n.wi) * fd(n.wo)

with fd(theta) = 1 + (FD90 - 1)(1 - cos theta)^5 and
FD90 = 0.5 + 2 * roughness * (h.wi)^2.

Gradients are taken with respect to the 8 scalar parameters
(base r/g/b, normal x/y/z, roughness, metallic); the normal is treated as a
free 3-vector so finite differences of the kernel match exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .maps import DIELECTRIC_SPECULAR

PI = np.pi

# GGX alpha floor: keeps the distribution and its gradients finite at
# roughness 0 while leaving any realistic roughness untouched.
ALPHA_MIN = 1e-3

# Below this (n.wi)(n.wo) product the configuration counts as below-horizon
# and the BRDF (and all gradients) are exactly zero.
HORIZON_EPS = 1e-6


@dataclass(frozen=True)
class ShadingPoint:
    """Material parameters at one surface point.

    ``normal`` is expected to be unit length in normal use; the evaluation
    functions do not renormalize, so gradient checks may perturb it freely.
    """

    base_color: np.ndarray  # (3,)
    normal: np.ndarray      # (3,)
    roughness: float
    metallic: float

    def __post_init__(self):
        b = np.asarray(self.base_color, dtype=np.float64)
        n = np.asarray(self.normal, dtype=np.float64)
        if b.shape != (3,) or n.shape != (3,):
            raise ValueError("base_color and normal must be 3-vectors")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(n))):
            raise ValueError("non-finite shading point")
        if b.min() < 0.0 or b.max() > 1.0:
            raise ValueError("base_color outside [0, 1]")
        if not (0.0 <= self.roughness <= 1.0 and 0.0 <= self.metallic <= 1.0):
            raise ValueError("roughness/metallic outside [0, 1]")
        object.__setattr__(self, "base_color", b)
        object.__setattr__(self, "normal", n)


@dataclass(frozen=True)
class DirectionPair:
    """Incoming/outgoing unit directions, both pointing away from the surface."""

    omega_i: np.ndarray  # (3,) toward the light
    omega_o: np.ndarray  # (3,) toward the viewer

    def __post_init__(self):
        wi = np.asarray(self.omega_i, dtype=np.float64)
        wo = np.asarray(self.omega_o, dtype=np.float64)
        if wi.shape != (3,) or wo.shape != (3,):
            raise ValueError("directions must be 3-vectors")
        for name, v in (("omega_i", wi), ("omega_o", wo)):
            if abs(np.linalg.norm(v) - 1.0) > 1e-3:
                raise ValueError(f"{name} is not unit length")
        object.__setattr__(self, "omega_i", wi)
        object.__setattr__(self, "omega_o", wo)


def ggx_ndf(alpha, cos_h):
    """GGX normal distribution D(h); ``cos_h`` is n.h, ``alpha`` the squared roughness."""
    alpha = np.asarray(alpha)
    cos_h = np.asarray(cos_h)
    t = cos_h * cos_h * (alpha * alpha - 1.0) + 1.0
    return alpha * alpha / (PI * t * t)


def smith_g1(alpha, cos_t):
    """Smith masking term for one direction with cosine ``cos_t`` > 0."""
    alpha = np.asarray(alpha)
    cos_t = np.asarray(cos_t)
    s = np.sqrt(alpha * alpha + (1.0 - alpha * alpha) * cos_t * cos_t)
    return 2.0 * cos_t / (cos_t + s)


def brdf_eval(base_color, normal, roughness, metallic, omega_i, omega_o):
    """Vectorized BRDF evaluation.

    All arguments broadcast; vectors live on the last axis.  Returns linear
    RGB reflectance with shape ``broadcast(...) + (3,)``.
    """
    rgb, _ = _eval_core(base_color, normal, roughness, metallic, omega_i, omega_o, want_grad=False)
    return rgb


def brdf_eval_grad(base_color, normal, roughness, metallic, omega_i, omega_o):
    """BRDF value plus the analytic Jacobian w.r.t. the 8 parameters.

    Returns ``(rgb, jac)`` with ``jac[..., c, k]`` the derivative of output
    channel c w.r.t. parameter k, ordered
    ``[b_r, b_g, b_b, n_x, n_y, n_z, roughness, metallic]``.
    """
    return _eval_core(base_color, normal, roughness, metallic, omega_i, omega_o, want_grad=True)


def eval_brdf(point: ShadingPoint, dirs: DirectionPair) -> np.ndarray:
    """Single-point convenience wrapper; returns linear RGB (3,)."""
    return brdf_eval(point.base_color, point.normal, point.roughness, point.metallic,
                     dirs.omega_i, dirs.omega_o)


def eval_brdf_grad(point: ShadingPoint, dirs: DirectionPair):
    """Single-point wrapper for :func:`brdf_eval_grad`; returns ((3,), (3, 8))."""
    return brdf_eval_grad(point.base_color, point.normal, point.roughness, point.metallic,
                          dirs.omega_i, dirs.omega_o)


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def _eval_core(base_color, normal, roughness, metallic, omega_i, omega_o, want_grad):
    b = np.asarray(base_color, dtype=np.float64)
    n = np.asarray(normal, dtype=np.float64)
    rough = np.asarray(roughness, dtype=np.float64)
    metal = np.asarray(metallic, dtype=np.float64)
    w_i = np.asarray(omega_i, dtype=np.float64)
    w_o = np.asarray(omega_o, dtype=np.float64)

    shape = np.broadcast_shapes(b.shape[:-1], n.shape[:-1], rough.shape, metal.shape,
                                w_i.shape[:-1], w_o.shape[:-1])
    b = np.broadcast_to(b, shape + (3,))
    n = np.broadcast_to(n, shape + (3,))
    w_i = np.broadcast_to(w_i, shape + (3,))
    w_o = np.broadcast_to(w_o, shape + (3,))
    rough = np.broadcast_to(rough, shape)
    metal = np.broadcast_to(metal, shape)

    c_i = _dot(n, w_i)
    c_o = _dot(n, w_o)
    live = (c_i > 0.0) & (c_o > 0.0) & (c_i * c_o >= HORIZON_EPS)
    # Clamp dead cosines to a safe value so the shared arithmetic below stays
    # finite; everything is masked to zero at the end.
    c_i = np.where(live, c_i, 1.0)
    c_o = np.where(live, c_o, 1.0)

    h_un = w_i + w_o
    h = h_un / np.maximum(np.linalg.norm(h_un, axis=-1, keepdims=True), 1e-20)
    c_h = _dot(n, h)
    vdh = np.clip(_dot(h, w_o), 0.0, 1.0)

    alpha = np.maximum(rough * rough, ALPHA_MIN)
    a2 = alpha * alpha

    t = c_h * c_h * (a2 - 1.0) + 1.0
    d_ndf = a2 / (PI * t * t)

    s_i = np.sqrt(a2 + (1.0 - a2) * c_i * c_i)
    s_o = np.sqrt(a2 + (1.0 - a2) * c_o * c_o)
    g1_i = 2.0 * c_i / (c_i + s_i)
    g1_o = 2.0 * c_o / (c_o + s_o)
    g = g1_i * g1_o

    spec_common = d_ndf * g / (4.0 * c_i * c_o)

    w5 = (1.0 - vdh) ** 5
    spec0 = DIELECTRIC_SPECULAR * (1.0 - metal)[..., None] + b * metal[..., None]
    fresnel = spec0 + (1.0 - spec0) * w5[..., None]

    diffuse = b * (1.0 - metal)[..., None]
    fd90 = 0.5 + 2.0 * rough * vdh * vdh
    pow_i = (1.0 - c_i) ** 5
    pow_o = (1.0 - c_o) ** 5
    fd_i = 1.0 + (fd90 - 1.0) * pow_i
    fd_o = 1.0 + (fd90 - 1.0) * pow_o

    k_s = spec_common[..., None] * fresnel
    k_d = diffuse / PI * (fd_i * fd_o)[..., None]
    rgb = np.where(live[..., None], k_s + k_d, 0.0)

    if not want_grad:
        return rgb, None

    jac = np.zeros(shape + (3, 8))

    # --- base color (diagonal in channel, same scalar for each) ----------
    d_db = spec_common * metal * (1.0 - w5) + (1.0 - metal) / PI * (fd_i * fd_o)
    for c in range(3):
        jac[..., c, c] = d_db

    # --- metallic --------------------------------------------------------
    d_spec0_dm = b - DIELECTRIC_SPECULAR
    d_ks_dm = spec_common[..., None] * (1.0 - w5)[..., None] * d_spec0_dm
    d_kd_dm = -b / PI * (fd_i * fd_o)[..., None]
    jac[..., 7] = d_ks_dm + d_kd_dm

    # --- roughness (through alpha and FD90) ------------------------------
    dalpha = np.where(rough * rough > ALPHA_MIN, 2.0 * rough, 0.0)
    dd_dalpha = (2.0 * alpha * t - 4.0 * alpha * a2 * c_h * c_h) / (PI * t ** 3)
    dg1i_dalpha = -2.0 * c_i * (alpha * (1.0 - c_i * c_i) / s_i) / (c_i + s_i) ** 2
    dg1o_dalpha = -2.0 * c_o * (alpha * (1.0 - c_o * c_o) / s_o) / (c_o + s_o) ** 2
    dsc_dalpha = (dd_dalpha * g + d_ndf * (dg1i_dalpha * g1_o + g1_i * dg1o_dalpha)) / (4.0 * c_i * c_o)
    dfd90 = 2.0 * vdh * vdh
    d_kd_drough = diffuse / PI * (dfd90 * (pow_i * fd_o + fd_i * pow_o))[..., None]
    jac[..., 6] = (dsc_dalpha * dalpha)[..., None] * fresnel + d_kd_drough

    # --- normal (free 3-vector; only the cosines depend on it) -----------
    dd_dch = -4.0 * a2 * c_h * (a2 - 1.0) / (PI * t ** 3)
    dsc_dch = dd_dch * g / (4.0 * c_i * c_o)
    # G1(c)/c = 2/(c + S)  =>  d/dc = -2 (1 + dS/dc) / (c + S)^2
    dsc_dci = d_ndf * g1_o / (4.0 * c_o) * (-2.0) * (1.0 + (1.0 - a2) * c_i / s_i) / (c_i + s_i) ** 2
    dsc_dco = d_ndf * g1_i / (4.0 * c_i) * (-2.0) * (1.0 + (1.0 - a2) * c_o / s_o) / (c_o + s_o) ** 2
    spec_n = dsc_dch[..., None] * h + dsc_dci[..., None] * w_i + dsc_dco[..., None] * w_o
    dfd_dci = -5.0 * (fd90 - 1.0) * (1.0 - c_i) ** 4
    dfd_dco = -5.0 * (fd90 - 1.0) * (1.0 - c_o) ** 4
    diff_n = (dfd_dci * fd_o)[..., None] * w_i + (fd_i * dfd_dco)[..., None] * w_o
    jac[..., 3:6] = (fresnel[..., :, None] * spec_n[..., None, :]
                     + (diffuse / PI)[..., :, None] * diff_n[..., None, :])

    jac = np.where(live[..., None, None], jac, 0.0)
    return rgb, jac

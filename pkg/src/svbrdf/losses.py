"""Training losses: content (parameter + rendering), adversarial, feature
matching, and their weighted totals with ablation switches.

All losses are functions of NCHW tensors from :mod:`svbrdf.autodiff`.  The
8-channel parameter layout is base color (0-2), normal (3-5), roughness (6),
metallic (7) — the same packing :func:`svbrdf.maps.pack_maps` produces and
the generator emits.

The rendering loss pipes gradients through the analytic renderer via a
custom graph node whose backward contracts the per-pixel 3x8 shading
Jacobian with the image cotangent — the tensor engine never needs to know
about BRDFs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .render import SceneConfig, log_tonemap, render_params, render_params_grad

log = logging.getLogger(__name__)

CSV_HEADER = "step,l_p,l_r,l_a_g,l_a_d,l_f,total_g,total_d"

# |n| may drift this far from 1 before angular_loss renormalizes (and warns).
UNIT_TOL = 1e-3


@dataclass(frozen=True)
class LossWeights:
    """Loss-term switches and weights."""

    enable_r: bool = True
    enable_p: bool = True
    enable_a: bool = True
    enable_f: bool = True
    lambda_f_disc: float = 0.01
    n_render_views: int = 10

    def __post_init__(self):
        if self.lambda_f_disc < 0.0:
            raise ValueError("lambda_f_disc must be >= 0")
        if self.n_render_views < 2 or self.n_render_views % 2:
            raise ValueError("n_render_views must be even and >= 2")


@dataclass(frozen=True)
class LossReport:
    """One training step's loss values, as logged to CSV."""

    l_p: float
    l_r: float
    l_a_g: float
    l_a_d: float
    l_f: float
    total_g: float
    total_d: float

    def csv_row(self, step):
        vals = (self.l_p, self.l_r, self.l_a_g, self.l_a_d, self.l_f, self.total_g, self.total_d)
        return f"{step}," + ",".join(format(v, ".8g") for v in vals)

    def finite(self):
        return all(np.isfinite(v) for v in
                   (self.l_p, self.l_r, self.l_a_g, self.l_a_d, self.l_f, self.total_g, self.total_d))


def mae(a, b):
    """Mean absolute error between two same-shape tensors (scalar Tensor)."""
    if a.shape != b.shape:
        raise ValueError(f"mae shape mismatch {a.shape} vs {b.shape}")
    return ad.reduce_mean(ad.absolute(a - b))


def angular_loss(n1, n2):
    """Mean angular distance between two unit-vector fields, normalized by pi.

    Inputs are (B, 3, H, W).  Non-unit inputs are renormalized with a logged
    diagnostic rather than rejected (8-bit decodes drift slightly).
    """
    for name, t in (("n1", n1), ("n2", n2)):
        if t.ndim != 4 or t.shape[1] != 3:
            raise ValueError(f"{name} must be (B, 3, H, W), got {t.shape}")
    if n1.shape != n2.shape:
        raise ValueError(f"angular_loss shape mismatch {n1.shape} vs {n2.shape}")

    def unitized(t, name):
        lengths = np.sqrt(np.sum(t.data * t.data, axis=1))
        if np.abs(lengths - 1.0).max() > UNIT_TOL:
            log.warning("angular_loss: %s max |len-1| = %.3g, renormalizing", name,
                        float(np.abs(lengths - 1.0).max()))
            return ad.normalize_channels(t)
        return t
    u1 = unitized(n1, "n1")
    u2 = unitized(n2, "n2")
    dots = ad.reduce_sum(u1 * u2, axis=1)
    return ad.reduce_mean(ad.acos(dots)) * (1.0 / np.pi)


def parameter_loss(fake, real):
    """Content loss over the four maps: unweighted mean of per-map distances.

    MAE for base color / roughness / metallic, angular distance for normals.
    Inputs are packed (B, 8, H, W) tensors.
    """
    for name, t in (("fake", fake), ("real", real)):
        if t.ndim != 4 or t.shape[1] != 8:
            raise ValueError(f"{name} must be (B, 8, H, W), got {t.shape}")
    if fake.shape != real.shape:
        raise ValueError(f"parameter_loss resolution mismatch {fake.shape} vs {real.shape}")
    terms = [
        mae(ad.narrow(fake, 1, 0, 3), ad.narrow(real, 1, 0, 3)),
        angular_loss(ad.narrow(fake, 1, 3, 3), ad.narrow(real, 1, 3, 3)),
        mae(ad.narrow(fake, 1, 6, 1), ad.narrow(real, 1, 6, 1)),
        mae(ad.narrow(fake, 1, 7, 1), ad.narrow(real, 1, 7, 1)),
    ]
    return (terms[0] + terms[1] + terms[2] + terms[3]) * 0.25


def render_views(params, views, cfg: SceneConfig = SceneConfig()):
    """Render a packed (B, 8, H, W) parameter tensor under each (light, view).

    Returns a (B, V, 3, H, W) tensor; differentiable in ``params`` through
    the analytic shading Jacobian.
    """
    data = params.data
    b, c, h, w = data.shape
    if c != 8:
        raise ValueError(f"expected 8 channels, got {c}")
    want_grad = params.requires_grad
    imgs = np.zeros((b, len(views), 3, h, w), dtype=np.float64)
    jac = np.zeros((b, len(views), h, w, 3, 8), dtype=np.float64) if want_grad else None
    for i in range(b):
        base = np.ascontiguousarray(data[i, 0:3].transpose(1, 2, 0)).astype(np.float64)
        normal = np.ascontiguousarray(data[i, 3:6].transpose(1, 2, 0)).astype(np.float64)
        rough = data[i, 6].astype(np.float64)
        metal = data[i, 7].astype(np.float64)
        for v, (light, view_pos) in enumerate(views):
            if want_grad:
                img, j = render_params_grad(base, normal, rough, metal, light, view_pos, cfg)
                jac[i, v] = j
            else:
                img = render_params(base, normal, rough, metal, light, view_pos, cfg)
            imgs[i, v] = img.transpose(2, 0, 1)

    if not want_grad:
        return ad.constant(imgs.astype(np.float32))

    def backward(g):
        d_params = np.einsum("bvchw,bvhwck->bkhw", np.asarray(g, dtype=np.float64), jac)
        ad.accumulate_grad(params, d_params.astype(params.data.dtype))

    return ad.custom_op(imgs.astype(np.float32), (params,), backward)


def rendering_loss(fake, real, views, cfg: SceneConfig = SceneConfig()):
    """Mean over views of MAE between log-tonemapped re-renderings.

    ``fake`` is a packed parameter tensor (gradient flows); ``real`` may be a
    tensor or ndarray and is rendered without gradient.
    """
    fake_r = render_views(fake, views, cfg)
    real_t = real if isinstance(real, ad.Tensor) else ad.Tensor(np.asarray(real, dtype=np.float32))
    with ad.no_grad():
        real_r = render_views(real_t.detach(), views, cfg)
    # log(1 + x) tone mapping inside the graph; x >= 0 so the log is safe
    fake_log = ad.log(fake_r + 1.0)
    real_log = ad.constant(log_tonemap(real_r.data))
    return mae(fake_log, real_log)


def lsgan_d(real_scores, fake_scores):
    """Discriminator objective, summed over scales.

    L = 1/2 mean((real - 1)^2) + 1/2 mean(fake^2) per scale.
    """
    real_scores = _as_list(real_scores)
    fake_scores = _as_list(fake_scores)
    if len(real_scores) != len(fake_scores):
        raise ValueError("scale count mismatch")
    total = None
    for r, f in zip(real_scores, fake_scores):
        term = ad.reduce_mean(ad.square(r - 1.0)) * 0.5 + ad.reduce_mean(ad.square(f)) * 0.5
        total = term if total is None else total + term
    return total


def lsgan_g(fake_scores):
    """Generator objective: L = 1/2 mean((fake - 1)^2), summed over scales."""
    total = None
    for f in _as_list(fake_scores):
        term = ad.reduce_mean(ad.square(f - 1.0)) * 0.5
        total = term if total is None else total + term
    return total


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def feature_matching(real_feats, fake_feats):
    """Mean over scales of the mean over layers of the per-element squared
    feature distance; the real branch is detached (targets, not optimized).

    Args:
        real_feats/fake_feats: list per scale of list per layer of tensors.
    """
    if len(real_feats) != len(fake_feats):
        raise ValueError("scale count mismatch")
    n_scales = len(real_feats)
    total = None
    for r_layers, f_layers in zip(real_feats, fake_feats):
        if len(r_layers) != len(f_layers):
            raise ValueError("layer count mismatch")
        n_layers = len(r_layers)
        for r, f in zip(r_layers, f_layers):
            term = ad.reduce_mean(ad.square(f - r.detach())) * (1.0 / (n_scales * n_layers))
            total = term if total is None else total + term
    return total


def total_losses(l_p, l_r, l_a_g, l_a_d, l_f, weights: LossWeights):
    """Combine loss terms into (total_g, total_d).

    total_g = 1/4 (L_a(G) + L_f + L_p + L_r), disabled terms contribute 0 and
    the 1/4 stays fixed so magnitudes are comparable across ablations;
    total_d = L_a(D) + lambda * L_f.  ``None`` marks a term that was not
    computed; it must be disabled via ``weights``.
    """
    def pick(term, enabled, name):
        if not enabled:
            return 0.0
        if term is None:
            raise ValueError(f"{name} enabled but not provided")
        return term

    g_terms = [
        pick(l_a_g, weights.enable_a, "l_a_g"),
        pick(l_f, weights.enable_f, "l_f"),
        pick(l_p, weights.enable_p, "l_p"),
        pick(l_r, weights.enable_r, "l_r"),
    ]
    total_g = _sum_mixed(g_terms) * 0.25
    if weights.enable_a:
        d_terms = [pick(l_a_d, True, "l_a_d")]
        if weights.enable_f and l_f is not None:
            d_terms.append(_scale_mixed(l_f, weights.lambda_f_disc))
        total_d = _sum_mixed(d_terms)
    else:
        total_d = 0.0
    return total_g, total_d


def _sum_mixed(terms):
    """Sum floats and scalar Tensors, promoting to Tensor if any is one."""
    tensors = [t for t in terms if isinstance(t, ad.Tensor)]
    const = sum(t for t in terms if not isinstance(t, ad.Tensor))
    if not tensors:
        return const
    total = tensors[0]
    for t in tensors[1:]:
        total = total + t
    if const:
        total = total + float(const)
    return total


def _scale_mixed(term, s):
    return term * s  # Tensor.__mul__ handles the scalar case


def scalar(x):
    """Float value of a loss term that may be a Tensor, float, or 0."""
    return float(x.item()) if isinstance(x, ad.Tensor) else float(x)

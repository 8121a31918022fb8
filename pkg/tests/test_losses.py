"""Loss probes: closed-form identities, switch algebra, and a finite-difference
check of the rendering loss's custom backward."""

import numpy as np
import pytest

import svbrdf.autodiff as ad
from svbrdf.losses import (
    CSV_HEADER,
    LossReport,
    LossWeights,
    angular_loss,
    feature_matching,
    lsgan_d,
    lsgan_g,
    mae,
    parameter_loss,
    render_views,
    rendering_loss,
    scalar,
    total_losses,
)
from svbrdf.maps import SvbrdfMaps, pack_maps
from svbrdf.render import SceneConfig, render_point_light, sample_loss_views


def _packed(rng, h=8, w=8, batch=1, rough=None):
    base = rng.uniform(0.1, 0.9, size=(h, w, 3))
    normal = np.zeros((h, w, 3))
    normal[..., 2] = 1.0
    r = np.full((h, w, 1), 0.5 if rough is None else rough)
    m = rng.uniform(0.0, 0.3, size=(h, w, 1))
    one = pack_maps(SvbrdfMaps(base, normal, r, m))
    return np.repeat(one[None], batch, axis=0).astype(np.float32)


def test_mae_known_values():
    a = ad.constant(np.array([[0.0, 1.0]], dtype=np.float32))
    b = ad.constant(np.array([[1.0, 0.0]], dtype=np.float32))
    assert scalar(mae(a, b)) == pytest.approx(1.0)
    assert scalar(mae(a, a)) == 0.0


def test_angular_loss_anchor_angles():
    def field(vec):
        arr = np.zeros((1, 3, 2, 2), dtype=np.float32)
        arr[0, :, :, :] = np.asarray(vec, dtype=np.float32)[:, None, None]
        return ad.constant(arr)

    z = field([0, 0, 1])
    x = field([1, 0, 0])
    neg_z = field([0, 0, -1])
    assert scalar(angular_loss(z, z)) == pytest.approx(0.0, abs=1e-3)
    assert scalar(angular_loss(z, x)) == pytest.approx(0.5, abs=1e-4)
    assert scalar(angular_loss(z, neg_z)) == pytest.approx(1.0, abs=1e-3)
    halfway = field([1, 0, 1] / np.sqrt(2.0))
    assert scalar(angular_loss(z, halfway)) == pytest.approx(0.25, abs=1e-4)


def test_angular_loss_renormalizes_drifted_input():
    arr = np.zeros((1, 3, 2, 2), dtype=np.float32)
    arr[0, 2] = 1.01  # 1% too long
    drifted = ad.constant(arr)
    unit = ad.constant((arr / 1.01).astype(np.float32))
    assert scalar(angular_loss(drifted, unit)) == pytest.approx(0.0, abs=1e-3)


def test_parameter_loss_identity_and_single_map():
    rng = np.random.default_rng(0)
    p = _packed(rng)
    t = ad.constant(p)
    assert scalar(parameter_loss(t, t)) == pytest.approx(0.0, abs=1e-3)

    q = p.copy()
    q[:, 7] = p[:, 7] + 1.0  # metallic off by exactly 1 everywhere
    assert scalar(parameter_loss(ad.constant(q), t)) == pytest.approx(0.25, abs=1e-3)

    q = p.copy()
    q[:, 0:3] += 0.08  # base color off by 0.08 -> contributes 0.08/4
    assert scalar(parameter_loss(ad.constant(q), t)) == pytest.approx(0.02, abs=1e-3)


def test_lsgan_anchors():
    ones = ad.constant(np.ones((1, 1, 4, 4), dtype=np.float32))
    zeros = ad.constant(np.zeros((1, 1, 4, 4), dtype=np.float32))
    halves = ad.constant(np.full((1, 1, 4, 4), 0.5, dtype=np.float32))
    assert scalar(lsgan_d(ones, zeros)) == pytest.approx(0.0)
    assert scalar(lsgan_g(ones)) == pytest.approx(0.0)
    assert scalar(lsgan_d(halves, halves)) == pytest.approx(0.25)
    assert scalar(lsgan_g(halves)) == pytest.approx(0.125)
    # two scales sum
    assert scalar(lsgan_d([halves, halves], [halves, halves])) == pytest.approx(0.5)
    assert scalar(lsgan_g([zeros, zeros])) == pytest.approx(1.0)


def test_feature_matching_constant_offset():
    rng = np.random.default_rng(1)
    real = [[ad.constant(rng.normal(size=(1, 4, 8, 8)).astype(np.float32))
             for _ in range(4)] for _ in range(2)]
    fake_same = [[ad.constant(t.data.copy()) for t in layers] for layers in real]
    assert scalar(feature_matching(real, fake_same)) == pytest.approx(0.0)

    c = 0.3
    fake_off = [[ad.constant(t.data.copy()) for t in layers] for layers in real]
    fake_off[1][2] = ad.constant(real[1][2].data + c)
    # one of S*L = 8 layer slots carries a uniform offset c -> c^2 / 8
    assert scalar(feature_matching(real, fake_off)) == pytest.approx(c * c / 8.0, rel=1e-5)


def test_feature_matching_detaches_real_branch():
    real = [[ad.parameter(np.ones((1, 2, 4, 4), dtype=np.float32))]]
    fake = [[ad.parameter(np.zeros((1, 2, 4, 4), dtype=np.float32))]]
    feature_matching(real, fake).backward()
    assert real[0][0].grad is None, "targets must not receive gradient"
    assert fake[0][0].grad is not None


def test_total_losses_unit_terms():
    w = LossWeights()
    total_g, total_d = total_losses(1.0, 1.0, 1.0, 0.25, 1.0, w)
    assert scalar(total_g) == pytest.approx(1.0)
    assert scalar(total_d) == pytest.approx(0.25 + 0.01 * 1.0)


def test_total_losses_ablation_algebra():
    no_r = LossWeights(enable_r=False)
    total_g, _ = total_losses(1.0, None, 1.0, 0.25, 1.0, no_r)
    assert scalar(total_g) == pytest.approx(0.75), "divisor stays 4 when a term is off"

    no_a = LossWeights(enable_a=False)
    total_g, total_d = total_losses(1.0, 1.0, None, None, 1.0, no_a)
    assert scalar(total_g) == pytest.approx(0.75)
    assert scalar(total_d) == 0.0

    no_f = LossWeights(enable_f=False)
    _, total_d = total_losses(1.0, 1.0, 1.0, 0.25, None, no_f)
    assert scalar(total_d) == pytest.approx(0.25), "lambda term drops with L_f"

    with pytest.raises(ValueError):
        total_losses(None, 1.0, 1.0, 0.25, 1.0, LossWeights())


def test_total_losses_keeps_graph():
    l_p = ad.parameter(np.array(1.0, dtype=np.float32)) * 1.0
    total_g, _ = total_losses(l_p, 1.0, 1.0, 0.25, 1.0, LossWeights())
    assert isinstance(total_g, ad.Tensor)
    total_g.backward()


def test_loss_report_csv():
    rep = LossReport(l_p=0.1, l_r=0.2, l_a_g=0.3, l_a_d=0.4, l_f=0.5,
                     total_g=0.275, total_d=0.405)
    assert CSV_HEADER == "step,l_p,l_r,l_a_g,l_a_d,l_f,total_g,total_d"
    assert rep.csv_row(7) == "7,0.1,0.2,0.3,0.4,0.5,0.275,0.405"
    assert rep.finite()
    assert not LossReport(np.nan, 0, 0, 0, 0, 0, 0).finite()


def test_render_views_matches_direct_renderer():
    rng = np.random.default_rng(2)
    cfg = SceneConfig()
    packed = _packed(rng, h=6, w=6, batch=2)
    views = sample_loss_views(rng, count=4, cfg=cfg)
    out = render_views(ad.constant(packed), views, cfg)
    assert out.shape == (2, 4, 3, 6, 6)
    from svbrdf.maps import unpack_maps
    maps = unpack_maps(packed[0])
    light, view_pos = views[1]
    direct = render_point_light(maps, light, view_pos, cfg)
    np.testing.assert_allclose(out.data[0, 1].transpose(1, 2, 0), direct, rtol=1e-5, atol=1e-7)


def test_rendering_loss_identity_is_zero():
    rng = np.random.default_rng(3)
    packed = _packed(rng, h=6, w=6)
    views = sample_loss_views(rng, count=4)
    t = ad.constant(packed)
    assert scalar(rendering_loss(t, t, views)) == pytest.approx(0.0, abs=1e-6)


def test_rendering_loss_sees_roughness_change():
    rng = np.random.default_rng(4)
    a = _packed(rng, h=8, w=8, rough=0.3)
    b = a.copy()
    b[:, 6] = 0.7
    views = sample_loss_views(rng, count=6)
    val = scalar(rendering_loss(ad.constant(a), ad.constant(b), views))
    assert val > 1e-3, "mirror-configuration views must expose a roughness change"


def test_rendering_loss_view_order_invariant():
    rng = np.random.default_rng(5)
    a = _packed(rng, h=6, w=6, rough=0.4)
    b = _packed(np.random.default_rng(99), h=6, w=6, rough=0.6)
    views = sample_loss_views(rng, count=4)
    v1 = scalar(rendering_loss(ad.constant(a), ad.constant(b), views))
    v2 = scalar(rendering_loss(ad.constant(a), ad.constant(b), views[::-1]))
    assert v1 == pytest.approx(v2, rel=1e-6)


def test_rendering_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    cfg = SceneConfig()
    fake = _packed(rng, h=16, w=16, rough=0.45)
    real = _packed(np.random.default_rng(77), h=16, w=16, rough=0.6)
    views = sample_loss_views(rng, count=4, cfg=cfg)

    p = ad.parameter(fake)
    rendering_loss(p, ad.constant(real), views, cfg).backward()
    g = p.grad.astype(np.float64)

    direction = np.random.default_rng(8).normal(size=fake.shape)
    direction[:, 3:6] *= 0.1  # keep normals comfortably inside the hemisphere
    eps = 1e-4

    def loss_at(t):
        shifted = ad.constant((fake + t * direction).astype(np.float64).astype(np.float32))
        return scalar(rendering_loss(shifted, ad.constant(real), views, cfg))

    fd = (loss_at(eps) - loss_at(-eps)) / (2 * eps)
    analytic = float(np.sum(g * direction))
    assert abs(fd - analytic) <= 1e-3 * max(1.0, abs(fd)), (fd, analytic)


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(lambda_f_disc=-0.1)
    with pytest.raises(ValueError):
        LossWeights(n_render_views=3)
    with pytest.raises(ValueError):
        LossWeights(n_render_views=0)

"""Network probes: shapes, output-range invariants, parameter arithmetic,
checkpoint round trips, and the gradient census."""

import numpy as np
import pytest

import svbrdf.autodiff as ad
from svbrdf.networks import (
    PatchDiscriminator,
    build_discriminators,
    build_generator,
    discriminate,
    load_network,
    save_network,
)


def test_generator_shapes_and_output_invariants():
    g = build_generator(width_scale=0.125, seed=3)
    rng = np.random.default_rng(0)
    x = ad.constant(rng.uniform(0, 1, size=(2, 3, 64, 64)).astype(np.float32))
    with ad.no_grad():
        y = g(x)
    assert y.shape == (2, 8, 64, 64)
    out = y.data
    assert out[:, 0:3].min() > 0.0 and out[:, 0:3].max() < 1.0, "base color in (0,1)"
    assert out[:, 6:8].min() > 0.0 and out[:, 6:8].max() < 1.0, "rough/metal in (0,1)"
    lengths = np.linalg.norm(out[:, 3:6], axis=1)
    assert np.abs(lengths - 1.0).max() < 1e-5, "normals unit length"
    assert out[:, 5].min() > 0.0, "normal z strictly positive"


def test_generator_rejects_bad_input():
    g = build_generator(width_scale=0.125)
    with pytest.raises(ValueError):
        g(ad.constant(np.zeros((1, 4, 64, 64), dtype=np.float32)))
    with pytest.raises(ValueError):
        g(ad.constant(np.zeros((1, 3, 60, 64), dtype=np.float32)))


def test_generator_parameter_count_closed_form():
    # independent arithmetic over the layer list at full width
    def conv_params(c_out, c_in, k):
        return c_out * c_in * k * k + c_out

    expected = conv_params(64, 3, 7)                      # c7s1-64
    for c_in, c_out in ((64, 128), (128, 256), (256, 512)):
        expected += conv_params(c_out, c_in, 3) + 2 * c_out   # d-layers + IN
    expected += 9 * (2 * (2 * 512) + 2 * conv_params(512, 512, 3))  # R512 x9
    for c_in, c_out in ((512, 256), (256, 128), (128, 64)):
        expected += c_in * c_out * 9 + c_out + 2 * c_out      # u-layers + IN
    expected += conv_params(8, 64, 7)                     # c7s1-8 head
    assert expected == 45_630_152  # frozen arithmetic

    g = build_generator(width_scale=1.0, seed=0)
    total = sum(int(np.prod(t.shape)) for t in g.parameters().values())
    assert total == expected


def test_discriminator_parameter_count_closed_form():
    def conv_params(c_out, c_in, k):
        return c_out * c_in * k * k + c_out

    expected = conv_params(64, 11, 4)
    for c_in, c_out in ((64, 128), (128, 256), (256, 512)):
        expected += conv_params(c_out, c_in, 4) + 2 * c_out
    expected += conv_params(1, 512, 4)
    assert expected == 2_774_721  # frozen arithmetic

    d = PatchDiscriminator(width_scale=1.0, seed=0)
    total = sum(int(np.prod(t.shape)) for t in d.parameters().values())
    assert total == expected


def test_discriminator_score_shapes_toy():
    d1, d2 = build_discriminators(width_scale=0.125, seed=7)
    rng = np.random.default_rng(1)
    img = ad.constant(rng.uniform(0, 1, size=(1, 3, 64, 64)).astype(np.float32))
    par = ad.constant(rng.uniform(0, 1, size=(1, 8, 64, 64)).astype(np.float32))
    with ad.no_grad():
        scales = discriminate(d1, d2, img, par)
    (s1, f1), (s2, f2) = scales
    assert s1.shape == (1, 1, 4, 4), "64 input: four stride-2 halvings -> 4x4"
    assert s2.shape == (1, 1, 2, 2), "half-res twin -> 2x2"
    assert len(f1) == 4 and len(f2) == 4
    assert np.all(np.isfinite(s1.data)) and np.all(np.isfinite(s2.data))


def test_discriminator_sensitive_to_params():
    d1, d2 = build_discriminators(width_scale=0.125, seed=9)
    rng = np.random.default_rng(2)
    img = ad.constant(rng.uniform(0, 1, size=(1, 3, 32, 32)).astype(np.float32))
    p1 = ad.constant(rng.uniform(0, 1, size=(1, 8, 32, 32)).astype(np.float32))
    p2 = ad.constant(rng.uniform(0, 1, size=(1, 8, 32, 32)).astype(np.float32))
    with ad.no_grad():
        s_a = discriminate(d1, d2, img, p1)[0][0]
        s_b = discriminate(d1, d2, img, p2)[0][0]
    assert not np.allclose(s_a.data, s_b.data), "score must react to the parameter maps"


def test_network_determinism_and_seeding():
    g1 = build_generator(width_scale=0.125, seed=11)
    g2 = build_generator(width_scale=0.125, seed=11)
    g3 = build_generator(width_scale=0.125, seed=12)
    p1, p2, p3 = g1.parameters(), g2.parameters(), g3.parameters()
    assert all(np.array_equal(p1[k].data, p2[k].data) for k in p1)
    assert any(not np.array_equal(p1[k].data, p3[k].data) for k in p1)


def test_checkpoint_roundtrip_through_network(tmp_path):
    g = build_generator(width_scale=0.125, seed=13)
    save_network(tmp_path / "generator.ckpt", g)
    h = build_generator(width_scale=0.125, seed=99)  # different init
    load_network(tmp_path / "generator.ckpt", h)
    for k, t in g.parameters().items():
        assert np.array_equal(t.data, h.parameters()[k].data), f"{k} not restored bit-exact"
    x = ad.constant(np.random.default_rng(3).uniform(0, 1, (1, 3, 16, 16)).astype(np.float32))
    with ad.no_grad():
        assert np.array_equal(g(x).data, h(x).data)


def test_checkpoint_shape_mismatch_rejected(tmp_path):
    g = build_generator(width_scale=0.125, seed=13)
    save_network(tmp_path / "generator.ckpt", g)
    wrong = build_generator(width_scale=0.25, seed=13)
    with pytest.raises(ValueError):
        load_network(tmp_path / "generator.ckpt", wrong)


def test_gradient_census_no_dead_parameters():
    # one backward pass must reach every trainable parameter
    g = build_generator(width_scale=0.125, seed=17)
    rng = np.random.default_rng(4)
    x = ad.constant(rng.uniform(0, 1, size=(1, 3, 16, 16)).astype(np.float32))
    target = ad.constant(rng.uniform(0, 1, size=(1, 8, 16, 16)).astype(np.float32))
    out = g(x)
    ad.reduce_mean(ad.square(out - target)).backward()
    dead = [k for k, t in g.parameters().items()
            if t.grad is None or not np.any(t.grad != 0.0)]
    assert not dead, f"generator parameters with no gradient: {dead}"

    # 32x32 keeps the last conv's output >1x1 so instance norm stays
    # non-degenerate; (score - 1)^2 avoids the zero fixed point at init
    d1, _ = build_discriminators(width_scale=0.125, seed=17)
    xin = ad.constant(rng.uniform(0, 1, size=(1, 11, 32, 32)).astype(np.float32))
    score, feats = d1(xin)
    loss = ad.reduce_mean(ad.square(score - 1.0))
    for f in feats:
        loss = loss + ad.reduce_mean(ad.square(f)) * 0.1
    loss.backward()
    dead = [k for k, t in d1.parameters().items()
            if t.grad is None or not np.any(t.grad != 0.0)]
    assert not dead, f"discriminator parameters with no gradient: {dead}"

"""File format probes: PNG quantization policy, PFM round-trips, material dirs."""

import numpy as np
import pytest

from svbrdf.imageio import load_material, read_pfm, read_png, save_material, write_pfm, write_png
from svbrdf.maps import SvbrdfMaps


def random_maps(rng, h=8, w=8):
    base = rng.uniform(0.05, 0.95, size=(h, w, 3))
    n = rng.normal(size=(h, w, 3))
    n[..., 2] = np.abs(n[..., 2]) + 0.3
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    rough = rng.uniform(0.1, 0.9, size=(h, w, 1))
    metal = rng.uniform(0.0, 1.0, size=(h, w, 1))
    return SvbrdfMaps(base.astype(np.float32), n.astype(np.float32),
                      rough.astype(np.float32), metal.astype(np.float32))


def test_png_roundtrip_linear(tmp_path):
    rng = np.random.default_rng(3)
    img = rng.uniform(size=(16, 16, 3)).astype(np.float32)
    p = tmp_path / "a.png"
    write_png(p, img, encoding="linear")
    back = read_png(p, encoding="linear")
    assert back.shape == (16, 16, 3)
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-6, "8-bit quantization error bound"


def test_png_roundtrip_srgb(tmp_path):
    rng = np.random.default_rng(4)
    img = rng.uniform(0.01, 1.0, size=(16, 16, 3)).astype(np.float32)
    p = tmp_path / "b.png"
    write_png(p, img, encoding="srgb")
    back = read_png(p, encoding="srgb")
    # sRGB storage keeps relative precision in the darks; absolute error stays small
    assert np.abs(back - img).max() < 6e-3


def test_png_grayscale_channel(tmp_path):
    img = np.linspace(0, 1, 64, dtype=np.float32).reshape(8, 8, 1)
    p = tmp_path / "g.png"
    write_png(p, img)
    back = read_png(p)
    assert back.shape == (8, 8, 1)
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-6


def test_pfm_roundtrip_color_and_gray(tmp_path):
    rng = np.random.default_rng(5)
    img = rng.normal(size=(7, 5, 3)).astype(np.float32) * 10.0
    p = tmp_path / "c.pfm"
    write_pfm(p, img)
    back = read_pfm(p)
    assert back.shape == (7, 5, 3)
    assert np.array_equal(back, img), "PFM must be lossless"

    gray = rng.normal(size=(4, 6, 1)).astype(np.float32)
    q = tmp_path / "d.pfm"
    write_pfm(q, gray)
    assert np.array_equal(read_pfm(q), gray)


def test_pfm_header_is_parseable(tmp_path):
    img = np.ones((2, 3, 3), dtype=np.float32)
    p = tmp_path / "e.pfm"
    write_pfm(p, img)
    head = p.read_bytes()[:32]
    assert head.startswith(b"PF\n3 2\n-1.0\n"), "header: type, width height, negative scale"


def test_material_roundtrip_png(tmp_path):
    rng = np.random.default_rng(6)
    m = random_maps(rng)
    save_material(tmp_path / "mat", m)
    back = load_material(tmp_path / "mat")
    assert back.resolution == m.resolution
    assert np.abs(back.base_color - m.base_color).max() < 6e-3
    assert np.abs(back.roughness - m.roughness).max() <= 0.5 / 255 + 1e-6
    assert np.abs(back.metallic - m.metallic).max() <= 0.5 / 255 + 1e-6
    dots = np.sum(back.normal * m.normal, axis=-1)
    assert dots.min() > 0.9995, "decoded normals must stay close to the originals"


def test_material_roundtrip_pfm_lossless(tmp_path):
    rng = np.random.default_rng(8)
    m = random_maps(rng)
    save_material(tmp_path / "mat", m, float_maps=True)
    back = load_material(tmp_path / "mat")
    assert np.abs(back.base_color - m.base_color).max() < 1e-6
    assert np.abs(back.normal - m.normal).max() < 1e-5
    assert np.abs(back.roughness - m.roughness).max() < 1e-6


def test_load_material_missing_maps_raises(tmp_path):
    (tmp_path / "mat").mkdir()
    with pytest.raises(FileNotFoundError):
        load_material(tmp_path / "mat")

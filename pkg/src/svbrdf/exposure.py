"""Physical auto-exposure for linear HDR renders.

Follows the saturation-based sensitometry convention: the scene's average
luminance picks an exposure value at ISO 100,

    EV100 = log2(L_avg * S / K)        with S = 100, K = 12.5,

which determines the maximum luminance a sensor at that exposure can record
before clipping,

    L_max = 78 / (q * S) * 2^EV100 = 1.2 * 2^EV100     with q = 0.65.

Dividing by L_max and clamping to [0, 1] yields the display-ready linear
image (sRGB encoding happens at file-write time).
"""

from __future__ import annotations

import numpy as np

ISO_S = 100.0
CALIBRATION_K = 12.5
LENS_Q = 0.65

# Rec. 709 / sRGB luminance weights for linear RGB.
LUMA_WEIGHTS = np.array([0.212671, 0.715160, 0.072169])

# Floor for the average luminance so empty/black renders do not produce
# -inf exposure values.
MIN_AVG_LUMINANCE = 1e-9


def luminance(img):
    """Per-pixel luminance of a linear RGB image, shape (H, W)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) linear RGB, got shape {img.shape}")
    return img @ LUMA_WEIGHTS


def ev100_from_average(avg_luminance):
    """Exposure value at ISO 100 for a measured average scene luminance."""
    avg = max(float(avg_luminance), MIN_AVG_LUMINANCE)
    return float(np.log2(avg * ISO_S / CALIBRATION_K))


def max_luminance(ev100):
    """Clipping luminance of a sensor exposed at ``ev100``."""
    return 78.0 / (LENS_Q * ISO_S) * 2.0 ** float(ev100)


def auto_expose(img, return_ev=False):
    """Expose a linear HDR image for display: divide by L_max, clamp to [0, 1].

    The exposure is computed from the image's own average luminance, so
    scaling the input by any positive constant yields the same output
    (before clamping ever engages).
    """
    img = np.asarray(img, dtype=np.float64)
    if not np.all(np.isfinite(img)):
        raise ValueError("exposure input contains non-finite values")
    if img.size and img.min() < 0.0:
        raise ValueError("exposure input must be non-negative linear radiance")
    ev = ev100_from_average(luminance(img).mean())
    out = np.clip(img / max_luminance(ev), 0.0, 1.0)
    if return_ev:
        return out, ev
    return out


def expose_with_ev(img, ev100):
    """Expose with a fixed, caller-chosen EV100 (for bracketing/debugging)."""
    img = np.asarray(img, dtype=np.float64)
    return np.clip(img / max_luminance(ev100), 0.0, 1.0)

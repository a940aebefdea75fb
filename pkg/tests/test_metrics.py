"""Metric implementations against brute-force references."""

import math

import numpy as np
import pytest
import torch

from skystreet.errors import DataError
from skystreet.metrics import (
    PSNR_CAP_DB,
    SSIM_K1,
    SSIM_K2,
    SSIM_SIGMA,
    SSIM_WINDOW,
    evaluate_set,
    perceptual_proxy,
    psnr,
    ssim,
)


def test_psnr_reference_values():
    a = np.zeros((8, 8, 3))
    b = np.full((8, 8, 3), 0.1)
    # MSE = 0.01 -> 20 dB, by hand.
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-12)
    assert psnr(a, a) == PSNR_CAP_DB
    # uint8 inputs are scaled to [0, 1] first.
    u = np.zeros((8, 8, 3), dtype=np.uint8)
    v = np.full((8, 8, 3), 255, dtype=np.uint8)
    assert psnr(u, v) == pytest.approx(0.0, abs=1e-12)


def test_psnr_monotone_in_noise():
    rng = np.random.default_rng(0)
    img = rng.uniform(size=(16, 16, 3))
    vals = [psnr(img, np.clip(img + rng.normal(scale=s, size=img.shape), 0, 1)) for s in (0.01, 0.05, 0.2)]
    assert vals[0] > vals[1] > vals[2]


def test_psnr_cap_on_tiny_mse():
    a = np.zeros((4, 4))
    b = np.full((4, 4), 1e-9)
    assert psnr(a, b) == PSNR_CAP_DB
    with pytest.raises(DataError):
        psnr(np.zeros((4, 4)), np.zeros((5, 4)))


def _gaussian_window():
    x = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2
    k = np.exp(-(x**2) / (2 * SSIM_SIGMA**2))
    k = k / k.sum()
    return np.outer(k, k)


def ssim_bruteforce(a, b):
    """Sliding-window SSIM, one window at a time, straight from the formula."""
    win = _gaussian_window()
    h, w, c = a.shape
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    vals = []
    for ch in range(c):
        for i in range(h - SSIM_WINDOW + 1):
            for j in range(w - SSIM_WINDOW + 1):
                pa = a[i : i + SSIM_WINDOW, j : j + SSIM_WINDOW, ch]
                pb = b[i : i + SSIM_WINDOW, j : j + SSIM_WINDOW, ch]
                mu_a = (win * pa).sum()
                mu_b = (win * pb).sum()
                s_aa = (win * pa * pa).sum() - mu_a**2
                s_bb = (win * pb * pb).sum() - mu_b**2
                s_ab = (win * pa * pb).sum() - mu_a * mu_b
                vals.append(
                    ((2 * mu_a * mu_b + c1) * (2 * s_ab + c2))
                    / ((mu_a**2 + mu_b**2 + c1) * (s_aa + s_bb + c2))
                )
    return float(np.mean(vals))


def test_ssim_matches_bruteforce():
    rng = np.random.default_rng(1)
    a = rng.uniform(size=(16, 14, 3))
    b = np.clip(a + rng.normal(scale=0.1, size=a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(ssim_bruteforce(a, b), abs=1e-10)


def test_ssim_identity_and_bounds():
    rng = np.random.default_rng(2)
    img = rng.uniform(size=(20, 20, 3))
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)
    other = rng.uniform(size=(20, 20, 3))
    v = ssim(img, other)
    assert -1.0 <= v < 1.0
    with pytest.raises(DataError, match="smaller than window"):
        ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


def test_ssim_grayscale_and_uint8():
    rng = np.random.default_rng(3)
    a = rng.integers(0, 256, size=(24, 24), dtype=np.uint8)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_proxy_zero_on_identity_and_blur_monotone():
    rng = np.random.default_rng(4)
    img = rng.uniform(size=(32, 32, 3))
    assert perceptual_proxy(img, img) == pytest.approx(0.0, abs=1e-15)

    def box_blur(x, k):
        from scipy.ndimage import uniform_filter

        return uniform_filter(x, size=(k, k, 1), mode="nearest")

    d = [perceptual_proxy(img, box_blur(img, k)) for k in (3, 7, 15)]
    assert 0 < d[0] < d[1] < d[2]


def test_proxy_is_deterministic():
    rng = np.random.default_rng(5)
    a = rng.uniform(size=(32, 32, 3))
    b = rng.uniform(size=(32, 32, 3))
    assert perceptual_proxy(a, b) == perceptual_proxy(a, b)
    with pytest.raises(DataError):
        perceptual_proxy(a, b[:16])


def test_evaluate_set_report_schema():
    rng = np.random.default_rng(6)
    renders = [rng.uniform(size=(16, 16, 3)) for _ in range(4)]
    targets = [np.clip(r + rng.normal(scale=0.05, size=r.shape), 0, 1) for r in renders]
    splits = ["aerial", "aerial", "ground", "ground"]
    ids = ["rig0000_down", "rig0000_front", "path00_wp0000", "path00_wp0001"]
    report = evaluate_set(renders, targets, splits, ids)
    assert report["version"] == 1
    assert [v["view_id"] for v in report["views"]] == ids
    a = report["splits"]["aerial"]
    g = report["splits"]["ground"]
    assert a["count"] == 2 and g["count"] == 2
    want_a = np.mean([v["psnr"] for v in report["views"][:2]])
    assert a["psnr"] == pytest.approx(want_a, abs=1e-12)
    overall = report["overall"]
    assert overall["count"] == 4
    assert overall["psnr"] == pytest.approx((a["psnr"] + g["psnr"]) / 2, abs=1e-12)
    # Degenerate split blocks keep count 0 with null means.
    ronly = evaluate_set(renders[:1], targets[:1], ["aerial"], ["rig0000_down"])
    assert ronly["splits"]["ground"] == {"count": 0, "psnr": None, "ssim": None, "perc_proxy": None}
    with pytest.raises(DataError, match="unknown split"):
        evaluate_set(renders[:1], targets[:1], ["orbital"], ["x"])
    with pytest.raises(DataError, match="length mismatch"):
        evaluate_set(renders, targets[:2], splits)


def test_metrics_are_python_floats():
    # JSON serialization requires plain floats, not numpy scalars.
    img = np.random.default_rng(7).uniform(size=(16, 16, 3))
    assert type(psnr(img, img)) is float
    assert type(ssim(img, img)) is float
    assert type(perceptual_proxy(img, img)) is float

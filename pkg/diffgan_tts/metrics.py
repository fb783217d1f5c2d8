"""Objective metrics on mel spectrograms: SSIM, MCD with DTW, DTW-aligned RMSE."""
from __future__ import annotations

import math
from typing import List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct
from scipy.spatial.distance import cdist

from .errors import ShapeError

SSIM_WINDOW = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03
MCD_COEFFS = 24
MCD_SCALE = 10.0 * math.sqrt(2.0) / math.log(10.0)

Path = List[Tuple[int, int]]


def ssim(a, b, data_range: Optional[float] = None, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all valid ``window x window`` patches (uniform weights)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError("ssim", a.shape, b.shape)
    if a.size == 0:
        raise ValueError("ssim: empty input")
    if data_range is None:
        data_range = max(float(np.ptp(a)), float(np.ptp(b)))
    if data_range == 0.0:
        data_range = 1.0
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    win = (min(window, a.shape[0]), min(window, a.shape[1]))
    wa = sliding_window_view(a, win)
    wb = sliding_window_view(b, win)
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    da = wa - mu_a[..., None, None]
    db = wb - mu_b[..., None, None]
    var_a = (da * da).mean(axis=(-2, -1))
    var_b = (db * db).mean(axis=(-2, -1))
    cov = (da * db).mean(axis=(-2, -1))
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def dtw(cost) -> Tuple[float, Path]:
    """Minimum-cost monotone path with steps (1,0), (0,1), (1,1); ties prefer the diagonal."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise ValueError(f"dtw: need a non-empty cost matrix, got shape {cost.shape}")
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            acc[i, j] = cost[i - 1, j - 1] + min(acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])
    path = [(n - 1, m - 1)]
    i, j = n, m
    while (i, j) != (1, 1):
        options = ((acc[i - 1, j - 1], i - 1, j - 1), (acc[i - 1, j], i - 1, j), (acc[i, j - 1], i, j - 1))
        _, i, j = min(options, key=lambda o: o[0])  # first minimum wins: diagonal
        path.append((i - 1, j - 1))
    path.reverse()
    return float(acc[n, m]), path


def mel_cepstra(mel, n_coeffs: int = MCD_COEFFS) -> np.ndarray:
    """DCT-II (orthonormal) of each log-mel frame, coefficients 1..n_coeffs."""
    mel = np.asarray(mel, dtype=np.float64)
    if mel.ndim != 2 or mel.shape[0] == 0:
        raise ValueError(f"mel_cepstra: need a non-empty [frames x bins] array, got {mel.shape}")
    return dct(mel, type=2, norm="ortho", axis=1)[:, 1 : n_coeffs + 1]


def mcd_dtw(a, b, n_coeffs: int = MCD_COEFFS) -> float:
    ca, cb = mel_cepstra(a, n_coeffs), mel_cepstra(b, n_coeffs)
    if ca.shape[1] != cb.shape[1]:
        raise ShapeError("mcd_dtw", np.shape(a), np.shape(b))
    total, path = dtw(cdist(ca, cb, metric="euclidean"))
    return MCD_SCALE * total / len(path)


def rmse_dtw(contour_a, contour_b) -> float:
    ca = np.asarray(contour_a, dtype=np.float64).ravel()
    cb = np.asarray(contour_b, dtype=np.float64).ravel()
    if ca.size == 0 or cb.size == 0:
        raise ValueError("rmse_dtw: empty contour")
    total, path = dtw((ca[:, None] - cb[None, :]) ** 2)
    return math.sqrt(total / len(path))


__all__ = ["ssim", "dtw", "mel_cepstra", "mcd_dtw", "rmse_dtw", "MCD_SCALE"]

import math

import numpy as np
import pytest

from diffgan_tts.errors import ShapeError
from diffgan_tts.metrics import MCD_SCALE, dtw, mcd_dtw, mel_cepstra, rmse_dtw, ssim


def brute_force_dtw(cost):
    n, m = cost.shape

    def best(i, j):
        here = cost[i, j]
        if (i, j) == (n - 1, m - 1):
            return here
        options = []
        if i + 1 < n:
            options.append(best(i + 1, j))
        if j + 1 < m:
            options.append(best(i, j + 1))
        if i + 1 < n and j + 1 < m:
            options.append(best(i + 1, j + 1))
        return here + min(options)

    return best(0, 0)


def windowed_ssim(a, b, window, data_range):
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    scores = []
    for i in range(a.shape[0] - window + 1):
        for j in range(a.shape[1] - window + 1):
            pa, pb = a[i : i + window, j : j + window], b[i : i + window, j : j + window]
            cov = np.mean((pa - pa.mean()) * (pb - pb.mean()))
            num = (2 * pa.mean() * pb.mean() + c1) * (2 * cov + c2)
            den = (pa.mean() ** 2 + pb.mean() ** 2 + c1) * (pa.var() + pb.var() + c2)
            scores.append(num / den)
    return float(np.mean(scores))


def test_ssim_identity_and_negation(rng):
    a = rng.standard_normal((12, 16))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ssim(a, -a) < 1.0
    assert ssim(np.ones((8, 8)), np.ones((8, 8))) == pytest.approx(1.0)


def test_ssim_matches_windowed_reference(rng):
    a, b = rng.standard_normal((9, 10)), rng.standard_normal((9, 10))
    data_range = max(np.ptp(a), np.ptp(b))
    assert ssim(a, b) == pytest.approx(windowed_ssim(a, b, 7, data_range), rel=1e-12)
    assert ssim(a, b) == pytest.approx(ssim(b, a), rel=1e-12)


def test_ssim_small_input_uses_whole_image(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    data_range = max(np.ptp(a), np.ptp(b))
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    cov = np.mean((a - a.mean()) * (b - b.mean()))
    expected = ((2 * a.mean() * b.mean() + c1) * (2 * cov + c2)
                / ((a.mean() ** 2 + b.mean() ** 2 + c1) * (a.var() + b.var() + c2)))
    assert ssim(a, b) == pytest.approx(expected, rel=1e-12)


def test_ssim_shape_errors():
    with pytest.raises(ShapeError):
        ssim(np.zeros((3, 3)), np.zeros((3, 4)))
    with pytest.raises(ValueError):
        ssim(np.zeros((0, 3)), np.zeros((0, 3)))


@pytest.mark.parametrize("n,m", [(1, 1), (2, 5), (4, 4), (6, 3)])
def test_dtw_matches_path_enumeration(rng, n, m):
    cost = rng.uniform(0.0, 2.0, size=(n, m))
    total, path = dtw(cost)
    assert total == pytest.approx(brute_force_dtw(cost), rel=1e-12)
    assert path[0] == (0, 0) and path[-1] == (n - 1, m - 1)
    for (i0, j0), (i1, j1) in zip(path, path[1:]):
        assert (i1 - i0, j1 - j0) in {(1, 0), (0, 1), (1, 1)}
    assert sum(cost[i, j] for i, j in path) == pytest.approx(total, rel=1e-12)


def test_dtw_prefers_diagonal_on_ties():
    assert dtw(np.zeros((3, 3)))[1] == [(0, 0), (1, 1), (2, 2)]
    with pytest.raises(ValueError):
        dtw(np.zeros((0, 2)))


def test_mcd_identity_and_duplicated_frame(rng):
    a = rng.standard_normal((6, 40))
    assert mcd_dtw(a, a) == 0.0
    stretched = np.insert(a, 3, a[2], axis=0)
    assert mcd_dtw(a, stretched) == 0.0
    assert mcd_dtw(a, a + rng.standard_normal(a.shape)) > 0.0


def test_mcd_single_frame_closed_form(rng):
    a, b = rng.standard_normal((1, 30)), rng.standard_normal((1, 30))
    diff = mel_cepstra(a) - mel_cepstra(b)
    assert mcd_dtw(a, b) == pytest.approx(MCD_SCALE * np.linalg.norm(diff), rel=1e-12)
    assert mel_cepstra(a).shape == (1, 24)


def test_rmse_constant_offset():
    contour = np.full(5, 2.0)
    assert rmse_dtw(contour, contour + 0.5) == pytest.approx(0.5)
    assert rmse_dtw(contour, np.full(3, 1.25)) == pytest.approx(0.75)


def test_rmse_matches_brute_force_on_small_contours(rng):
    a, b = rng.standard_normal(4), rng.standard_normal(3)
    cost = (a[:, None] - b[None, :]) ** 2
    _, path = dtw(cost)
    expected = math.sqrt(brute_force_dtw(cost) / len(path))
    assert rmse_dtw(a, b) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ValueError):
        rmse_dtw([], [1.0])

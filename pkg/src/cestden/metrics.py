"""Reconstruction fidelity metrics: MSE, PSNR, SSIM, per-voxel log temporal MSE.

All reductions run in a fixed order, so repeated calls on the same arrays
return bit-identical values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .volume import ZSpectrumVolume

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2  # (K1 * data_range)^2 with K1=0.01, range 1
SSIM_C2 = 0.03**2

LNTMSE_FLOOR = 1e-20

METRIC_CSV_HEADER = "method,K,sigma,mse,psnr,ssim,q1,median,q3"


def _as_data(x) -> np.ndarray:
    if isinstance(x, ZSpectrumVolume):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _paired(x, xhat):
    a, b = _as_data(x), _as_data(xhat)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(x, xhat) -> float:
    """Mean squared difference over every stored sample."""
    a, b = _paired(x, xhat)
    d = a - b
    return float(np.mean(d * d))


def psnr(x, xhat, peak: float = 1.0) -> float:
    """10*log10(peak^2 / mse); returns +inf for exact equality."""
    if not peak > 0:
        raise ValueError("peak must be > 0")
    err = mse(x, xhat)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def ssim_image(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM of two 2-D images over valid window positions.

    11x11 Gaussian window (sigma 1.5), stabilizers C1=(0.01)^2, C2=(0.03)^2
    for unit data range.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise ValueError(f"need equal 2-D images, got {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(
            f"image {a.shape} smaller than {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    kern = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)

    def filt(img):
        w = sliding_window_view(img, (SSIM_WINDOW, SSIM_WINDOW))
        return np.tensordot(w, kern, axes=([2, 3], [0, 1]))

    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


def ssim(x: ZSpectrumVolume, xhat: ZSpectrumVolume) -> float:
    """Volume SSIM: per-offset image SSIM averaged over offsets."""
    if not isinstance(x, ZSpectrumVolume) or not isinstance(xhat, ZSpectrumVolume):
        raise TypeError("ssim expects two ZSpectrumVolume inputs")
    if (x.M, x.N, x.C) != (xhat.M, xhat.N, xhat.C):
        raise ValueError(
            f"shape mismatch: {(x.M, x.N, x.C)} vs {(xhat.M, xhat.N, xhat.C)}"
        )
    total = 0.0
    for q in range(x.C):
        total += ssim_image(x.image(q), xhat.image(q))
    return total / x.C


def ln_tmse(x, xhat) -> np.ndarray:
    """Per-voxel log of the summed squared spectral error, floored at 1e-20.

    Accepts two volumes (returns M x N) or two (rows, C) arrays (returns
    a length-rows vector).
    """
    a, b = _paired(x, xhat)
    d = a - b
    s = np.sum(d * d, axis=-1)
    field = np.log(np.maximum(s, LNTMSE_FLOOR))
    if isinstance(x, ZSpectrumVolume):
        return field.reshape(x.M, x.N)
    return field


def quartiles(field) -> tuple:
    """(q1, median, q3) with linear interpolation between order statistics."""
    arr = np.asarray(field, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("quartiles of an empty field")
    q = np.quantile(arr, [0.25, 0.5, 0.75])
    return (float(q[0]), float(q[1]), float(q[2]))


@dataclass(eq=False)
class MetricReport:
    mse: float
    psnr: float
    ssim: float
    lntmse_map: np.ndarray
    lntmse_quartiles: tuple


def compute_report(truth: ZSpectrumVolume, test: ZSpectrumVolume) -> MetricReport:
    """All metrics of one reconstruction against its reference."""
    if (truth.M, truth.N, truth.C) != (test.M, test.N, test.C):
        raise ValueError(
            f"shape mismatch: {(truth.M, truth.N, truth.C)} vs "
            f"{(test.M, test.N, test.C)}"
        )
    err = mse(truth, test)
    field = ln_tmse(truth, test)
    return MetricReport(
        mse=err,
        psnr=psnr(truth, test),
        ssim=ssim(truth, test),
        lntmse_map=field,
        lntmse_quartiles=quartiles(field),
    )


def report_csv_row(method: str, K: int, sigma: float, report: MetricReport) -> str:
    q1, med, q3 = report.lntmse_quartiles
    vals = (report.mse, report.psnr, report.ssim, q1, med, q3)
    return f"{method},{K},{sigma:.17g}," + ",".join(f"{v:.17g}" for v in vals)

"""Fusion quality metrics.

Reference-based metrics (PSNR, SSIM, FSIM, MI, FMI) compare the fused image
with each source and average the two values. Histogram-based metrics use
256 bins; intensities are binned on the 8-bit grid ``round(p * 255)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import ndimage

from .dataio import to_bytes
from .errors import ShapeError, ValidationError

PSNR_CAP_DB = 100.0
BINS = 256

# SSIM
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# FSIM (canonical T2 = 160 on a 0..255 scale; gradients scale by 1/255 here)
FSIM_T1 = 0.85
FSIM_T2 = 160.0 / 255.0**2
FSIM_MIN_SIZE = 32

# Scharr kernels as used by FSIM
_SCHARR_X = np.array([[3, 0, -3], [10, 0, -10], [3, 0, -3]], dtype=np.float64) / 16.0
_SCHARR_Y = _SCHARR_X.T.copy()


def _pixels(img) -> np.ndarray:
    return np.asarray(getattr(img, "pixels", img), dtype=np.float64)


def _check_same(*imgs) -> list[np.ndarray]:
    arrs = [_pixels(i) for i in imgs]
    for a in arrs:
        if a.ndim != 2:
            raise ShapeError(f"metrics expect 2-D images, got shape {a.shape}")
        if a.shape != arrs[0].shape:
            raise ShapeError(f"image shapes differ: {arrs[0].shape} vs {a.shape}")
    return arrs


# -- PSNR --------------------------------------------------------------------

def psnr_single(ref, img) -> float:
    ref, img = _check_same(ref, img)
    mse = float(np.mean((ref - img) ** 2))
    if mse == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def psnr(fused, src_a, src_b) -> float:
    return 0.5 * (psnr_single(src_a, fused) + psnr_single(src_b, fused))


# -- SSIM --------------------------------------------------------------------

def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    r = win.shape[0] // 2
    return ndimage.correlate(x, win, mode="constant")[r:-r, r:-r]


def ssim_single(x, y) -> float:
    """Mean SSIM over all full 11×11 Gaussian windows (data range 1)."""
    x, y = _check_same(x, y)
    if min(x.shape) < SSIM_WINDOW:
        raise ValidationError(f"SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {x.shape}")
    win = gaussian_window()
    c1, c2 = (SSIM_K1 * 1.0) ** 2, (SSIM_K2 * 1.0) ** 2
    mx, my = _filter_valid(x, win), _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mx * mx
    syy = _filter_valid(y * y, win) - my * my
    sxy = _filter_valid(x * y, win) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(fused, src_a, src_b) -> float:
    return 0.5 * (ssim_single(src_a, fused) + ssim_single(src_b, fused))


# -- FSIM --------------------------------------------------------------------

def _freq_grid(n: int) -> np.ndarray:
    if n % 2:
        return np.arange(-(n - 1) / 2, (n - 1) / 2 + 1) / (n - 1)
    return np.arange(-n / 2, n / 2) / n


def phase_congruency(img, nscale: int = 4, norient: int = 4, min_wavelength: float = 6,
                     mult: float = 2, sigma_onf: float = 0.55, dtheta_on_sigma: float = 1.2,
                     k: float = 2.0) -> np.ndarray:
    """Phase congruency map from a log-Gabor filter bank (FSIM's variant).

    Filters are built in the frequency domain; the per-orientation energy is
    soft-thresholded by a noise estimate derived from the smallest scale.
    """
    im = np.asarray(img, dtype=np.float64)
    rows, cols = im.shape
    eps = 1e-4
    image_fft = np.fft.fft2(im)

    x, y = np.meshgrid(_freq_grid(cols), _freq_grid(rows))
    radius = np.fft.ifftshift(np.sqrt(x**2 + y**2))
    theta = np.fft.ifftshift(np.arctan2(-y, x))
    lowpass = 1.0 / (1.0 + (radius / 0.45) ** 30)
    radius[0, 0] = 1.0
    sin_t, cos_t = np.sin(theta), np.cos(theta)

    log_gabor = []
    for s in range(nscale):
        fo = 1.0 / (min_wavelength * mult**s)
        lg = np.exp(-(np.log(radius / fo) ** 2) / (2 * np.log(sigma_onf) ** 2)) * lowpass
        lg[0, 0] = 0.0
        log_gabor.append(lg)

    theta_sigma = np.pi / norient / dtheta_on_sigma
    energy_all = np.zeros_like(im)
    an_all = np.zeros_like(im)
    for o in range(norient):
        angl = o * np.pi / norient
        ds = sin_t * np.cos(angl) - cos_t * np.sin(angl)
        dc = cos_t * np.cos(angl) + sin_t * np.sin(angl)
        dtheta = np.abs(np.arctan2(ds, dc))
        spread = np.exp(-(dtheta**2) / (2 * theta_sigma**2))

        eo, ifft_filters = [], []
        sum_e = np.zeros_like(im)
        sum_o = np.zeros_like(im)
        sum_an = np.zeros_like(im)
        for s in range(nscale):
            filt = log_gabor[s] * spread
            ifft_filters.append(np.real(np.fft.ifft2(filt)) * np.sqrt(rows * cols))
            resp = np.fft.ifft2(image_fft * filt)
            eo.append(resp)
            sum_an += np.abs(resp)
            sum_e += resp.real
            sum_o += resp.imag
            if s == 0:
                em_n = np.sum(filt**2)

        x_energy = np.sqrt(sum_e**2 + sum_o**2) + eps
        mean_e, mean_o = sum_e / x_energy, sum_o / x_energy
        energy = np.zeros_like(im)
        for resp in eo:
            e, od = resp.real, resp.imag
            energy += e * mean_e + od * mean_o - np.abs(e * mean_o - od * mean_e)

        # noise from the smallest-scale response (Rayleigh model)
        median_e2n = np.median(np.abs(eo[0]) ** 2)
        noise_power = (-median_e2n / np.log(0.5)) / em_n
        est_an2 = sum(f**2 for f in ifft_filters)
        est_aiaj = np.zeros_like(im)
        for i in range(nscale - 1):
            for j in range(i + 1, nscale):
                est_aiaj += ifft_filters[i] * ifft_filters[j]
        noise_energy2 = 2 * noise_power * est_an2.sum() + 4 * noise_power * est_aiaj.sum()
        tau = np.sqrt(noise_energy2 / 2)
        threshold = (tau * np.sqrt(np.pi / 2) + k * np.sqrt((2 - np.pi / 2) * tau**2)) / 1.7

        energy_all += np.maximum(energy - threshold, 0.0)
        an_all += sum_an

    return np.divide(energy_all, an_all, out=np.zeros_like(im), where=an_all > 0)


def gradient_magnitude(img, mode: str = "constant") -> np.ndarray:
    """Scharr gradient magnitude; ``mode`` is the scipy boundary rule.

    FSIM uses zero padding; FMI replicates edges so that adding a constant
    to an image leaves its gradient map unchanged.
    """
    im = _pixels(img)
    gx = ndimage.convolve(im, _SCHARR_X, mode=mode)
    gy = ndimage.convolve(im, _SCHARR_Y, mode=mode)
    return np.sqrt(gx**2 + gy**2)


def _fsim_downsample(im: np.ndarray) -> np.ndarray:
    f = max(1, round(min(im.shape) / 256))
    if f == 1:
        return im
    k = np.ones((f, f)) / (f * f)
    return ndimage.convolve(im, k, mode="constant")[::f, ::f]


def fsim_single(ref, img) -> float:
    ref, img = _check_same(ref, img)
    if min(ref.shape) < FSIM_MIN_SIZE:
        raise ValidationError(f"FSIM needs images of at least {FSIM_MIN_SIZE}×{FSIM_MIN_SIZE}, got {ref.shape}")
    y1, y2 = _fsim_downsample(ref), _fsim_downsample(img)
    # phase congruency on the 0..255 scale so its internal epsilon keeps its usual meaning
    pc1, pc2 = phase_congruency(255.0 * y1), phase_congruency(255.0 * y2)
    g1, g2 = gradient_magnitude(y1), gradient_magnitude(y2)
    s_pc = (2 * pc1 * pc2 + FSIM_T1) / (pc1**2 + pc2**2 + FSIM_T1)
    s_g = (2 * g1 * g2 + FSIM_T2) / (g1**2 + g2**2 + FSIM_T2)
    pc_m = np.maximum(pc1, pc2)
    denom = pc_m.sum()
    if denom <= 0:
        # no phase structure anywhere (e.g. flat images)
        return float(np.mean(s_pc * s_g))
    return float(np.sum(s_pc * s_g * pc_m) / denom)


def fsim(fused, src_a, src_b) -> float:
    return 0.5 * (fsim_single(src_a, fused) + fsim_single(src_b, fused))


# -- information measures ----------------------------------------------------

def _entropy_of_counts(counts: np.ndarray) -> float:
    p = counts[counts > 0].astype(np.float64)
    p /= p.sum()
    return float(-np.sum(p * np.log2(p)) + 0.0)


def entropy(img) -> float:
    """Shannon entropy (bits) of the 256-bin intensity histogram."""
    levels = to_bytes(_pixels(img)).ravel()
    return _entropy_of_counts(np.bincount(levels, minlength=BINS))


def _mi_from_joint(joint: np.ndarray) -> tuple[float, float, float]:
    hx = _entropy_of_counts(joint.sum(axis=1))
    hy = _entropy_of_counts(joint.sum(axis=0))
    hxy = _entropy_of_counts(joint.ravel())
    return hx + hy - hxy, hx, hy


def mutual_information_single(x, y) -> float:
    x, y = _check_same(x, y)
    bx = to_bytes(x).ravel().astype(np.int64)
    by = to_bytes(y).ravel().astype(np.int64)
    joint = np.bincount(bx * BINS + by, minlength=BINS * BINS).reshape(BINS, BINS)
    return max(0.0, _mi_from_joint(joint)[0])


def mutual_information(fused, src_a, src_b) -> float:
    return 0.5 * (mutual_information_single(src_a, fused) + mutual_information_single(src_b, fused))


def _bin_feature(f: np.ndarray) -> np.ndarray:
    lo, hi = f.min(), f.max()
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        return np.zeros(f.size, dtype=np.int64)
    idx = np.floor((f - lo) / (hi - lo) * BINS).astype(np.int64)
    return np.minimum(idx, BINS - 1).ravel()


def feature_mi_single(src, fused) -> float:
    """Normalised MI 2·I/(H1+H2) between Scharr gradient-magnitude maps."""
    src, fused = _check_same(src, fused)
    fa = _bin_feature(gradient_magnitude(src, mode="nearest"))
    fb = _bin_feature(gradient_magnitude(fused, mode="nearest"))
    joint = np.bincount(fa * BINS + fb, minlength=BINS * BINS).reshape(BINS, BINS)
    mi, ha, hb = _mi_from_joint(joint)
    if ha + hb == 0:
        return 1.0
    return float(np.clip(2.0 * mi / (ha + hb), 0.0, 1.0))


def fmi_pixel(fused, src_a, src_b) -> float:
    return 0.5 * (feature_mi_single(src_a, fused) + feature_mi_single(src_b, fused))


# -- reports -----------------------------------------------------------------

@dataclass
class MetricReport:
    pair_id: str
    psnr: float
    ssim: float
    fsim: float
    mi: float
    fmi_pixel: float
    entropy: float

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in fields(cls)][1:]

    def values(self) -> list[float]:
        return [getattr(self, n) for n in self.names()]

    def as_dict(self) -> dict:
        return asdict(self)


REPORT_HEADER = ["pair_id"] + MetricReport.names()


def compute_all(fused, src_a, src_b, pair_id: str = "") -> MetricReport:
    f, a, b = _check_same(fused, src_a, src_b)
    return MetricReport(
        pair_id=pair_id,
        psnr=psnr(f, a, b),
        ssim=ssim(f, a, b),
        fsim=fsim(f, a, b),
        mi=mutual_information(f, a, b),
        fmi_pixel=fmi_pixel(f, a, b),
        entropy=entropy(f),
    )


def mean_report(reports, pair_id: str = "MEAN") -> MetricReport:
    reports = list(reports)
    if not reports:
        raise ValidationError("cannot average an empty list of reports")
    means = np.mean([r.values() for r in reports], axis=0)
    return MetricReport(pair_id, *[float(v) for v in means])

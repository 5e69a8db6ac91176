import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusenet.dataio import quantize
from fusenet.errors import ShapeError, ValidationError
from fusenet.metrics import (
    PSNR_CAP_DB,
    REPORT_HEADER,
    MetricReport,
    compute_all,
    entropy,
    feature_mi_single,
    fmi_pixel,
    fsim_single,
    gaussian_window,
    mean_report,
    mutual_information_single,
    phase_congruency,
    psnr,
    psnr_single,
    ssim_single,
)
from fusenet.phantom import phantom_pair
from fusenet.pipeline import read_report_csv, write_report_csv


@pytest.fixture(scope="module")
def shepp():
    from skimage.data import shepp_logan_phantom
    from skimage.transform import resize

    return quantize(resize(shepp_logan_phantom(), (256, 256), order=1, anti_aliasing=True))


@pytest.fixture(scope="module")
def pair():
    mri, ct = phantom_pair(96, seed=3)
    return mri.pixels, ct.pixels


# -- PSNR ------------------------------------------------------------------------

def test_psnr_examples(pair):
    a = pair[0]
    assert psnr(a, a, a) == PSNR_CAP_DB
    z, h = np.zeros((8, 8)), np.full((8, 8), 0.5)
    assert psnr(h, z, np.ones((8, 8))) == pytest.approx(10 * math.log10(4), abs=1e-12)
    assert psnr(h, z, np.ones((8, 8))) == pytest.approx(6.0206, abs=1e-3)
    assert psnr_single(pair[0], pair[1]) == psnr_single(pair[1], pair[0])


# -- SSIM ------------------------------------------------------------------------

def test_gaussian_window():
    w = gaussian_window()
    assert w.shape == (11, 11)
    assert w.sum() == pytest.approx(1.0, abs=1e-15)


def test_ssim_identity_and_constants(pair):
    assert ssim_single(pair[0], pair[0]) == pytest.approx(1.0, abs=1e-9)
    c = np.full((16, 16), 0.5)
    assert ssim_single(c, c) == pytest.approx(1.0, abs=1e-12)
    checker = (np.indices((32, 32)).sum(axis=0) // 4 % 2).astype(float)
    assert ssim_single(checker, 1 - checker) < 1


def test_ssim_matches_skimage(pair):
    from skimage.metrics import structural_similarity

    a, b = pair
    ref = structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False)
    assert ssim_single(a, b) == pytest.approx(ref, abs=1e-10)


def test_ssim_too_small():
    with pytest.raises(ValidationError):
        ssim_single(np.zeros((8, 8)), np.zeros((8, 8)))


# -- FSIM ------------------------------------------------------------------------

def test_fsim_identity(pair):
    assert fsim_single(pair[0], pair[0]) == pytest.approx(1.0, abs=1e-6)


def test_fsim_matches_piq(pair):
    torch = pytest.importorskip("torch")
    piq = pytest.importorskip("piq")
    a, b = pair
    ta = torch.tensor(a[None, None])
    tb = torch.tensor(b[None, None])
    ref = float(piq.fsim(tb, ta, data_range=1.0, chromatic=False))
    assert fsim_single(a, b) == pytest.approx(ref, abs=1e-4)


def test_fsim_prefers_structure_over_raw_intensity(pair):
    src = pair[0]
    scaled = 0.4 * src + 0.3
    assert fsim_single(src, scaled) > ssim_single(src, scaled)


def test_fsim_noise_is_worse(pair):
    noise = np.random.default_rng(0).random(pair[0].shape)
    assert fsim_single(pair[0], noise) < fsim_single(pair[0], pair[0])


def test_fsim_flat_images_and_small_input():
    c = np.full((40, 40), 0.3)
    assert fsim_single(c, c) == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        fsim_single(np.zeros((16, 16)), np.zeros((16, 16)))


def test_phase_congruency_range(pair):
    pc = phase_congruency(255 * pair[0])
    assert pc.shape == pair[0].shape
    assert pc.min() >= 0 and pc.max() <= 1 + 1e-9


# -- entropy, MI, FMI ------------------------------------------------------------------

def test_entropy_examples():
    assert entropy(np.full((8, 8), 0.3)) == 0.0
    assert entropy(np.repeat([0.0, 1.0], 32).reshape(8, 8)) == pytest.approx(1.0)
    uniform = (np.arange(256 * 4) % 256).reshape(32, 32) / 255
    assert entropy(uniform) == pytest.approx(8.0, abs=1e-9)


def test_mi_identity_and_symmetry(pair):
    a, b = pair
    assert mutual_information_single(a, a) == pytest.approx(entropy(a), abs=1e-12)
    assert mutual_information_single(a, b) == pytest.approx(mutual_information_single(b, a), abs=1e-12)


def test_mi_of_shuffled_image(shepp):
    vals = []
    for seed in range(10):
        shuffled = np.random.default_rng(seed).permutation(shepp.ravel()).reshape(shepp.shape)
        vals.append(mutual_information_single(shepp, shuffled))
    assert np.mean(vals) <= 0.05


def test_fmi_examples(shepp):
    assert feature_mi_single(shepp, shepp) == pytest.approx(1.0)
    assert fmi_pixel(shepp, shepp, shepp) == pytest.approx(1.0)
    noise = np.random.default_rng(0).random(shepp.shape)
    assert feature_mi_single(shepp, noise) <= 0.1


def test_fmi_shift_invariance(pair):
    a, b = pair
    f = 0.5 * (a + b)
    base = fmi_pixel(f * 0.8, a * 0.8, b * 0.8)
    assert fmi_pixel(f * 0.8 + 0.1, a * 0.8 + 0.1, b * 0.8 + 0.1) == pytest.approx(base, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_information_bounds(seed):
    rng = np.random.default_rng(seed)
    x, y = quantize(rng.random((16, 16))), quantize(rng.random((16, 16)) ** 2)
    mi = mutual_information_single(x, y)
    assert 0 <= mi <= min(entropy(x), entropy(y)) + 1e-9
    assert 0 <= feature_mi_single(x, y) <= 1
    assert 0 <= entropy(x) <= 8


# -- reports ------------------------------------------------------------------------

def test_identity_report(pair):
    a = pair[0]
    r = compute_all(a, a, a, pair_id="x")
    assert r.psnr == PSNR_CAP_DB
    assert r.ssim == pytest.approx(1.0, abs=1e-9)
    assert r.fsim == pytest.approx(1.0, abs=1e-6)
    assert r.mi == pytest.approx(entropy(a))
    assert r.fmi_pixel == pytest.approx(1.0)
    assert r.entropy == entropy(a)


def test_report_header_and_shapes(pair):
    assert REPORT_HEADER == ["pair_id", "psnr", "ssim", "fsim", "mi", "fmi_pixel", "entropy"]
    with pytest.raises(ShapeError):
        compute_all(pair[0], pair[1], pair[0][:-4])


def test_report_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    reports = [MetricReport(f"p{i:02d}", *rng.random(6)) for i in range(20)]
    mean = mean_report(reports)
    write_report_csv(reports, tmp_path / "r.csv", mean)
    back = read_report_csv(tmp_path / "r.csv")
    assert len(back) == 21 and back[-1].pair_id == "MEAN"
    for got, want in zip(back, reports + [mean]):
        np.testing.assert_allclose(got.values(), want.values(), rtol=0, atol=1e-6)
    with pytest.raises(ValidationError):
        mean_report([])

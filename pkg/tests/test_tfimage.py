import numpy as np
import pytest

from frftvit.channel import LinkConfig, PmdConfig, apply_cd, run_link
from frftvit.frft import DEFAULT_SCAN_ORDERS, frft_oracle
from frftvit.frft import frft
from frftvit.signals import DualPolSignal, FrameLayout, build_transmitter, generate_ts
from frftvit.tfimage import (
    IMAGE_SIZE,
    Sinogram,
    TfImage,
    build_sinogram,
    inverse_radon,
    make_feature,
    order_to_angle,
    principal_axis_angle,
    ramp_filter,
    resample_rows,
)

LAYOUT = FrameLayout(payload_symbols=512)


def blob_phantom(rng, size=IMAGE_SIZE, n_blobs=None):
    """Random sum of isotropic Gaussian blobs inside the inscribed disk: ``(params, image)``."""
    n_blobs = n_blobs or int(rng.integers(1, 5))
    c = (size - 1) / 2
    x = np.arange(size) - c
    xx, yy = np.meshgrid(x, -x)
    blobs = []
    img = np.zeros((size, size))
    for _ in range(n_blobs):
        r = rng.uniform(0, 0.5 * c)
        phi = rng.uniform(0, 2 * np.pi)
        x0, y0 = r * np.cos(phi), r * np.sin(phi)
        s = rng.uniform(3.0, 8.0)
        amp = rng.uniform(0.5, 1.0)
        blobs.append((x0, y0, s, amp))
        img += amp * np.exp(-((xx - x0) ** 2 + (yy - y0) ** 2) / (2 * s**2))
    return blobs, img


def blob_sinogram(blobs, angles, n_bins=IMAGE_SIZE):
    """Analytic line integrals of the blobs at each angle."""
    r = np.arange(n_bins) - (n_bins - 1) / 2
    data = np.zeros((1, len(angles), n_bins))
    for j, th in enumerate(angles):
        for x0, y0, s, amp in blobs:
            centre = x0 * np.cos(th) + y0 * np.sin(th)
            data[0, j] += amp * np.sqrt(2 * np.pi) * s * np.exp(-((r - centre) ** 2) / (2 * s**2))
    return Sinogram(data, np.asarray(angles))


def disk_corr(a, b):
    n = a.shape[0]
    c = (n - 1) / 2
    x = np.arange(n) - c
    xx, yy = np.meshgrid(x, x)
    m = xx**2 + yy**2 <= c**2
    return np.corrcoef(a[m], b[m])[0, 1]


def scan_angles(n):
    return order_to_angle(np.linspace(-1, 1, n))


# --- sinogram --------------------------------------------------------------------


def test_sinogram_shape_and_rows():
    ts = generate_ts(0.1, 100, 2)
    s = build_sinogram(np.stack([ts, ts]))
    assert s.data.shape == (2, 41, 100)
    assert s.n_angles == 41 and s.n_bins == 100
    assert np.all(s.data >= 0)
    assert np.allclose(s.data.sum(axis=-1), 1.0, atol=1e-6)
    assert s.angles[0] == pytest.approx(0.0) and s.angles[-1] == pytest.approx(np.pi)


def test_sinogram_accepts_dual_pol_signal():
    ts = generate_ts(0.3, 100, 2)
    sig = DualPolSignal(np.stack([ts, 1j * ts]), 100e9)
    s = build_sinogram(sig)
    assert np.allclose(s.data[0], s.data[1], atol=1e-12)


def test_sinogram_rejects_short_ts():
    with pytest.raises(ValueError):
        build_sinogram(np.ones((2, 32)))


def test_sinogram_type_validates():
    with pytest.raises(ValueError):
        Sinogram(np.ones((2, 5, 10)), np.zeros(4))


def test_resample_rows_keeps_centre_and_sum():
    row = np.zeros(200)
    row[100] = 1.0
    out = resample_rows(row[None], 100)[0]
    assert out.sum() == pytest.approx(1.0)
    # the origin of the 200-grid lands between bins 49 and 50
    assert out[49] == pytest.approx(out[50])
    assert np.argmax(out) in (49, 50)


def oracle_rows(x, orders):
    rows = np.array([np.abs(frft_oracle(x, a)) ** 2 for a in orders])
    return rows / rows.sum(axis=-1, keepdims=True)


ORDERS = [-0.8, -0.45, -0.2, 0.2, 0.45, 0.8]


def test_scan_mirror_under_conjugation(rng):
    from conftest import gaussian_atom

    x = gaussian_atom(rng, 128)
    fast = build_sinogram(np.conj(x), ORDERS, 128).data[0]
    mirrored = oracle_rows(x, [-a for a in ORDERS])
    assert np.allclose(fast, resample_rows(mirrored, 128), atol=1e-6)


def test_scan_mirror_under_time_reversal(rng):
    from conftest import gaussian_atom
    from frftvit.frft import reverse

    x = gaussian_atom(rng, 128)
    # conjugate time-reverse: order a row equals the flipped order -a row
    y = np.conj(reverse(x))
    fast = build_sinogram(y, ORDERS, 128).data[0]
    expect = np.stack([reverse(r) for r in oracle_rows(x, [-a for a in ORDERS])])
    assert np.allclose(fast, resample_rows(expect, 128), atol=1e-6)
    # plain time reversal only flips each row
    fast = build_sinogram(reverse(x), ORDERS, 128).data[0]
    expect = np.stack([reverse(r) for r in oracle_rows(x, ORDERS)])
    assert np.allclose(fast, resample_rows(expect, 128), atol=1e-6)


@pytest.mark.parametrize("a", [-0.7, -0.25, 0.15, 0.5, 0.9])
def test_scan_rows_are_wigner_projections(a):
    # chirped, shifted Gaussian: Wigner is a 2-D Gaussian, its projections are analytic
    n = 256
    t = (np.arange(n) - n // 2) / np.sqrt(n)
    sig, c, t0, f0 = 0.6, 0.5, 0.8, -0.5
    x = np.exp(-((t - t0) ** 2) / (2 * sig**2) + 1j * np.pi * c * (t - t0) ** 2 + 2j * np.pi * f0 * t)
    q = np.array([[1 / sig**2 + 4 * np.pi**2 * sig**2 * c**2, -4 * np.pi**2 * sig**2 * c],
                  [-4 * np.pi**2 * sig**2 * c, 4 * np.pi**2 * sig**2]])
    cov = np.linalg.inv(2 * q)
    al = a * np.pi / 2
    e = np.array([np.cos(al), np.sin(al)])
    mean = e @ np.array([t0, f0])
    proj = np.exp(-((t - mean) ** 2) / (2 * (e @ cov @ e)))
    row = np.abs(frft(x, a)) ** 2
    assert np.sum(np.abs(row / row.sum() - proj / proj.sum())) < 0.02


# --- reconstruction ----------------------------------------------------------------


def test_ramp_filter_removes_dc():
    rows = np.ones((1, 3, 64))
    out = ramp_filter(rows)
    assert abs(out[0, 0, 32]) < 0.05


def test_centered_gaussian_peaks_at_centre():
    blobs = [(0.0, 0.0, 5.0, 1.0)]
    img = inverse_radon(blob_sinogram(blobs, scan_angles(41)))
    plane = img.pixels[..., 0]
    i, j = np.unravel_index(np.argmax(plane), plane.shape)
    assert {i, j} <= {49, 50}
    assert plane.max() == pytest.approx(1.0)


def test_blob_phantom_correlation():
    rng = np.random.default_rng(3)
    blobs, truth = blob_phantom(rng)
    img = inverse_radon(blob_sinogram(blobs, scan_angles(41)), normalize="none")
    assert disk_corr(img.pixels[..., 0], truth) >= 0.95


def test_reconstruction_amplitude_is_calibrated():
    blobs = [(10.0, -5.0, 6.0, 1.0)]
    img = inverse_radon(blob_sinogram(blobs, scan_angles(81)), normalize="none")
    assert img.pixels.max() == pytest.approx(1.0, rel=0.05)


def test_error_decreases_with_angles():
    rng = np.random.default_rng(11)
    errs = {11: [], 21: [], 41: []}
    for _ in range(20):
        blobs, truth = blob_phantom(rng)
        for k in errs:
            img = inverse_radon(blob_sinogram(blobs, scan_angles(k)), normalize="none").pixels[..., 0]
            errs[k].append(np.linalg.norm(img - truth) / np.linalg.norm(truth))
    mean = [np.mean(errs[k]) for k in (11, 21, 41)]
    assert mean[0] > mean[1] > mean[2]


def test_zero_sinogram_gives_zero_image():
    s = Sinogram(np.zeros((2, 41, 100)), scan_angles(41))
    img = inverse_radon(s)
    assert img.shape == (100, 100, 2)
    assert not img.pixels.any()


def test_angle_requirements():
    with pytest.raises(ValueError):
        inverse_radon(Sinogram(np.ones((1, 5, 100)), scan_angles(5)))
    narrow = np.linspace(0, np.radians(120), 20)
    with pytest.raises(ValueError):
        inverse_radon(Sinogram(np.ones((1, 20, 100)), narrow))
    with pytest.raises(ValueError):
        inverse_radon(Sinogram(np.ones((1, 20, 100)), scan_angles(20)), normalize="max")


def test_normalization_modes():
    blobs = [(0.0, 0.0, 5.0, 1.0)]
    one = blob_sinogram(blobs, scan_angles(41)).data
    s = Sinogram(np.concatenate([one, 0.5 * one]), scan_angles(41))
    plane = inverse_radon(s, normalize="plane").pixels
    assert plane[..., 0].max() == pytest.approx(1.0) and plane[..., 1].max() == pytest.approx(1.0)
    joint = inverse_radon(s, normalize="joint").pixels
    assert joint[..., 1].max() == pytest.approx(0.5, rel=1e-9)
    raw = inverse_radon(s, normalize="none").pixels
    assert raw.min() >= 0


def test_tfimage_bytes_round_trip(rng):
    px = rng.uniform(size=(100, 100, 2)).astype(np.float32)
    img = TfImage(px)
    buf = img.to_bytes()
    assert len(buf) == 100 * 100 * 2 * 4
    # plane-major: the first 10000 floats are the x plane, row-major
    assert np.array_equal(np.frombuffer(buf[:40000], "<f4").reshape(100, 100), px[..., 0])
    assert np.array_equal(TfImage.from_bytes(buf).pixels, px)


def test_tfimage_validates():
    with pytest.raises(ValueError):
        TfImage(np.zeros((100, 100)))
    with pytest.raises(ValueError):
        TfImage(np.full((10, 10, 2), np.nan))


# --- feature path -------------------------------------------------------------------


def clean_frame(order=0.1, cd=0.0):
    layout = FrameLayout(payload_symbols=512, ts_order=order)
    tx = build_transmitter(layout, 1, None)
    frame = tx.frame if cd == 0 else apply_cd(tx.frame, cd)
    return frame, layout


@pytest.mark.parametrize("order", [0.1, -0.3, 0.5])
def test_clean_ridge_orientation(order):
    frame, layout = clean_frame(order)
    img = make_feature(frame, layout)
    assert img.shape == (100, 100, 2)
    assert 0 <= img.pixels.min() and img.pixels.max() == pytest.approx(1.0)
    assert principal_axis_angle(img.pixels[..., 0]) == pytest.approx(order * 90, abs=5.0)


def test_ridge_angle_monotone_in_cd():
    # beyond ~2500 ps/nm the dispersed TS no longer fits the 200-sample window
    angles = []
    for cd in np.arange(0, 2501, 250):
        frame, layout = clean_frame(0.1, cd)
        angles.append(principal_axis_angle(make_feature(frame, layout).pixels[..., 0]))
    assert np.all(np.diff(angles) < 0), angles


def test_feature_deterministic_and_reads_only_received():
    cfg = LinkConfig(n_channels=1, spans=1, pmd=PmdConfig(20, 10.0, 3))
    tx = build_transmitter(LAYOUT, 2, 2.0)
    a = run_link(cfg, [tx.frame], 7)
    b = run_link(cfg, [tx.frame], 7)
    b.labels["cd_ps_per_nm"] = -1.0
    b.labels["dgd_ps"] = 1e9
    ia, ib = make_feature(a, LAYOUT), make_feature(b, LAYOUT)
    assert ia.to_bytes() == ib.to_bytes()
    assert ia.to_bytes() == make_feature(a.received, LAYOUT).to_bytes()


def test_principal_axis_of_line():
    img = np.zeros((100, 100))
    for i in range(-30, 31):
        # y grows upward: row = c - y
        img[49 - i, 49 + i] = 1.0
    assert principal_axis_angle(img) == pytest.approx(45.0, abs=1e-6)
    assert principal_axis_angle(np.fliplr(img)) == pytest.approx(-45.0, abs=1e-6)


def test_default_orders_give_41_rows():
    assert len(DEFAULT_SCAN_ORDERS) == 41

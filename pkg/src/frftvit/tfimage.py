"""Time-frequency feature images from the received training sequence.

Each ``|frft(ts, a)|**2`` row is a projection of the TS's Wigner distribution
onto the axis rotated by ``a*pi/2``. A scan over orders is therefore a
sinogram, and filtered back-projection turns it into an image of the
time-frequency plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frft import DEFAULT_SCAN_ORDERS, frft_scan
from .signals import DualPolSignal, FrameLayout, extract_ts

IMAGE_SIZE = 100
MIN_TS_LENGTH = 64
MIN_ANGLES = 8
MIN_SPAN = np.deg2rad(150.0)


@dataclass(frozen=True)
class Sinogram:
    """Projection rows per polarization.

    ``data`` has shape ``(n_pol, n_angles, n_bins)``; ``angles`` are Radon
    angles in radians, ``theta = a*pi/2 + pi/2``.
    """

    data: np.ndarray
    angles: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.ndim == 2:
            d = d[None]
        if d.ndim != 3:
            raise ValueError("sinogram data must be (n_pol, n_angles, n_bins)")
        ang = np.asarray(self.angles, dtype=float)
        if ang.shape != (d.shape[1],):
            raise ValueError("one angle per sinogram row required")
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "angles", ang)

    @property
    def n_angles(self) -> int:
        return self.data.shape[1]

    @property
    def n_bins(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class TfImage:
    """``(size, size, n_pol)`` image with values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=float)
        if p.ndim != 3 or p.shape[0] != p.shape[1]:
            raise ValueError("image must have shape (size, size, n_pol)")
        if not np.all(np.isfinite(p)):
            raise ValueError("image contains non-finite values")
        object.__setattr__(self, "pixels", p)

    @property
    def shape(self):
        return self.pixels.shape

    def to_bytes(self) -> bytes:
        """Row-major little-endian float32, one plane after another (x, then y)."""
        planes = np.moveaxis(self.pixels, -1, 0)
        return np.ascontiguousarray(planes, dtype="<f4").tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes, size: int = IMAGE_SIZE, n_pol: int = 2) -> "TfImage":
        planes = np.frombuffer(buf, dtype="<f4")
        if planes.size != size * size * n_pol:
            raise ValueError(f"expected {size * size * n_pol} floats, got {planes.size}")
        return cls(np.moveaxis(planes.reshape(n_pol, size, size), 0, -1).astype(float))


def order_to_angle(orders) -> np.ndarray:
    return np.asarray(orders, dtype=float) * np.pi / 2 + np.pi / 2


def resample_rows(rows: np.ndarray, n_bins: int) -> np.ndarray:
    """Rebin each row onto ``n_bins`` bins, renormalized to unit sum.

    The cumulative sum of the row is linearly interpolated at the new bin
    edges and differenced, so every native sample contributes (plain point
    sampling would skip samples when downsampling). The native grid's origin
    (index ``N//2``) lands on the centre of the new grid, so symmetric
    content stays symmetric.
    """
    rows = np.asarray(rows, dtype=float)
    n = rows.shape[-1]
    scale = n / n_bins
    edges = n // 2 + (np.arange(n_bins + 1) - n_bins / 2) * scale
    # native sample i covers [i - 1/2, i + 1/2]
    grid = np.arange(n + 1) - 0.5
    flat = rows.reshape(-1, n)
    out = np.empty((flat.shape[0], n_bins))
    for i, r in enumerate(flat):
        cdf = np.concatenate([[0.0], np.cumsum(r)])
        out[i] = np.diff(np.interp(edges, grid, cdf))
    s = out.sum(axis=-1, keepdims=True)
    out = np.divide(out, s, out=np.zeros_like(out), where=s > 0)
    return out.reshape(rows.shape[:-1] + (n_bins,))


def build_sinogram(ts_rx, orders=DEFAULT_SCAN_ORDERS, n_bins: int = IMAGE_SIZE) -> Sinogram:
    """FrFT scan of the received TS, resampled to ``n_bins`` radial bins.

    Parameters
    ----------
    ts_rx : DualPolSignal or array_like
        Received TS, ``(n_pol, N)`` with ``N >= 64``.
    orders : sequence of float
        Ascending FrFT orders in [-1, 1].
    n_bins : int
        Radial bins per row.
    """
    data = np.asarray(getattr(ts_rx, "fields", ts_rx), dtype=complex)
    if data.ndim == 1:
        data = data[None]
    if data.shape[-1] < MIN_TS_LENGTH:
        raise ValueError(f"TS must have at least {MIN_TS_LENGTH} samples per polarization")
    rows = frft_scan(data, orders)
    return Sinogram(resample_rows(rows, n_bins), order_to_angle(orders))


def ramp_filter(rows: np.ndarray) -> np.ndarray:
    """Ram-Lak filtering along the last axis.

    Uses the band-limited ramp's spatial impulse response (1/4 at 0,
    ``-1/(pi*n)**2`` at odd n), zero-padded, which avoids the DC offset of
    sampling ``|f|`` directly.
    """
    n = rows.shape[-1]
    size = int(2 ** np.ceil(np.log2(2 * n)))
    k = np.concatenate([np.arange(size // 2 + 1), np.arange(size // 2 - 1, 0, -1)])
    h = np.zeros(size)
    h[0] = 0.25
    odd = k % 2 == 1
    h[odd] = -1.0 / (np.pi * k[odd]) ** 2
    filt = np.real(np.fft.fft(h))
    out = np.fft.ifft(np.fft.fft(rows, size, axis=-1) * filt, axis=-1)
    return np.real(out[..., :n])


def _unique_angles(angles: np.ndarray):
    """Indices of rows to keep: drop a trailing row that duplicates the first at +pi."""
    keep = np.arange(angles.size)
    if angles.size > 1 and abs(angles[-1] - angles[0] - np.pi) < 1e-9:
        keep = keep[:-1]
    return keep


def inverse_radon(s: Sinogram, size: int = IMAGE_SIZE, normalize: str = "plane") -> TfImage:
    """Filtered back-projection with linear interpolation along the radial axis.

    Parameters
    ----------
    s : Sinogram
    size : int
        Output grid is ``size x size`` with one pixel per radial bin.
    normalize : {"plane", "joint", "none"}
        Max-normalize each plane, both planes together, or not at all.

    Returns
    -------
    TfImage
        Negative values clipped to 0. An all-zero reconstruction stays zero.
    """
    if normalize not in ("plane", "joint", "none"):
        raise ValueError("normalize must be 'plane', 'joint' or 'none'")
    keep = _unique_angles(s.angles)
    angles = s.angles[keep]
    if angles.size < MIN_ANGLES:
        raise ValueError(f"need at least {MIN_ANGLES} projection angles")
    if np.ptp(angles) < MIN_SPAN:
        raise ValueError("projection angles must span at least 150 degrees")
    rows = ramp_filter(s.data[:, keep, :])
    n_bins = s.n_bins
    c = (size - 1) / 2
    x = np.arange(size) - c
    # row index grows downward; y grows upward
    xx, yy = np.meshgrid(x, -x)
    radial = np.arange(n_bins) - (n_bins - 1) / 2
    img = np.zeros((s.data.shape[0], size, size))
    for j, th in enumerate(angles):
        pos = xx * np.cos(th) + yy * np.sin(th)
        for p in range(s.data.shape[0]):
            img[p] += np.interp(pos, radial, rows[p, j], left=0.0, right=0.0)
    img *= np.pi / angles.size
    img = np.clip(img, 0.0, None)
    if normalize == "plane":
        m = img.max(axis=(1, 2), keepdims=True)
        img = np.divide(img, m, out=np.zeros_like(img), where=m > 0)
    elif normalize == "joint" and img.max() > 0:
        img /= img.max()
    return TfImage(np.moveaxis(img, 0, -1))


def make_feature(received: DualPolSignal, layout: FrameLayout, orders=DEFAULT_SCAN_ORDERS,
                 size: int = IMAGE_SIZE, normalize: str = "plane") -> TfImage:
    """TS of a received frame to a ``(size, size, 2)`` image.

    Accepts a :class:`DualPolSignal` or anything carrying one as
    ``.received`` (e.g. a channel realization). Only the received samples
    are read.
    """
    sig = getattr(received, "received", received)
    ts = extract_ts(sig, layout)
    return inverse_radon(build_sinogram(ts, orders, size), size, normalize)


def principal_axis_angle(plane: np.ndarray) -> float:
    """Orientation (degrees, in (-90, 90]) of the major axis from second moments.

    Measured from the image x axis (columns), counterclockwise with y up.
    """
    plane = np.asarray(plane, dtype=float)
    n = plane.shape[0]
    c = (n - 1) / 2
    x = np.arange(n) - c
    xx, yy = np.meshgrid(x, -x)
    w = plane / plane.sum()
    mx, my = np.sum(w * xx), np.sum(w * yy)
    cxx = np.sum(w * (xx - mx) ** 2)
    cyy = np.sum(w * (yy - my) ** 2)
    cxy = np.sum(w * (xx - mx) * (yy - my))
    return float(np.degrees(0.5 * np.arctan2(2 * cxy, cxx - cyy)))

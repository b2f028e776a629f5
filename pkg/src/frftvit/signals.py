"""Transmitter side: signal containers, PDM-QPSK payloads, the chirp training
sequence, RRC pulse shaping and frame assembly."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .frft import frft

QPSK_POINTS = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / np.sqrt(2)


@dataclass(frozen=True)
class ComplexSignal:
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=complex)
        if s.ndim != 1 or s.size == 0:
            raise ValueError("samples must be a nonempty 1-D array")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.size

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2))


@dataclass(frozen=True)
class DualPolSignal:
    """Two polarization streams stored as a ``(2, N)`` complex array."""

    fields: np.ndarray
    sample_rate: float

    def __post_init__(self):
        f = np.asarray(self.fields, dtype=complex)
        if f.ndim != 2 or f.shape[0] != 2 or f.shape[1] == 0:
            raise ValueError("fields must have shape (2, N) with N > 0")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "fields", f)

    @classmethod
    def from_pols(cls, x_pol: ComplexSignal, y_pol: ComplexSignal) -> "DualPolSignal":
        if len(x_pol) != len(y_pol) or x_pol.sample_rate != y_pol.sample_rate:
            raise ValueError("polarizations must share length and sample rate")
        return cls(np.stack([x_pol.samples, y_pol.samples]), x_pol.sample_rate)

    @property
    def x_pol(self) -> ComplexSignal:
        return ComplexSignal(self.fields[0], self.sample_rate)

    @property
    def y_pol(self) -> ComplexSignal:
        return ComplexSignal(self.fields[1], self.sample_rate)

    def __len__(self):
        return self.fields.shape[1]

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.fields) ** 2))

    @property
    def mean_power(self) -> float:
        """Mean of ``|x|^2 + |y|^2`` per sample."""
        return float(np.mean(np.sum(np.abs(self.fields) ** 2, axis=0)))

    def with_fields(self, fields: np.ndarray) -> "DualPolSignal":
        return DualPolSignal(fields, self.sample_rate)


@dataclass(frozen=True)
class FrameLayout:
    ts_symbols: int = 100
    payload_symbols: int = 2**14
    sps: int = 2
    rolloff: float = 0.02
    ts_order: float = 0.1
    symbol_rate: float = 50e9
    rrc_span: int = 256

    def __post_init__(self):
        if self.ts_symbols < 1:
            raise ValueError("ts_symbols must be >= 1")
        if self.sps < 2:
            raise ValueError("sps must be >= 2")
        if not 0 <= self.rolloff <= 1:
            raise ValueError("rolloff must lie in [0, 1]")
        if not -2 < self.ts_order < 2:
            raise ValueError("ts_order must lie in (-2, 2)")

    @property
    def ts_samples(self) -> int:
        return self.ts_symbols * self.sps

    @property
    def frame_samples(self) -> int:
        return (self.ts_symbols + self.payload_symbols) * self.sps

    @property
    def sample_rate(self) -> float:
        return self.sps * self.symbol_rate


def generate_qpsk_symbols(seed: int, n: int) -> np.ndarray:
    """Independent uniform QPSK symbols on both polarizations, shape ``(2, n)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return QPSK_POINTS[rng.integers(0, 4, size=(2, n))]


def ts_window_width(n_samples: int) -> float:
    """Default Gaussian window std (samples) for a TS of ``n_samples``.

    A quarter of the width of the Gaussian that every FrFT order leaves
    unchanged, ``sqrt(N / 2pi)``, so the window is a thin ridge in the
    time-frequency plane and its orientation is measurable.
    """
    return np.sqrt(n_samples / (2 * np.pi)) / 4


def generate_ts(order: float, length: int, sps: int, width: float | None = None) -> np.ndarray:
    """Chirp training sequence that compacts to a Gaussian at FrFT order ``order``.

    Returns ``length * sps`` unit-energy samples equal to the order ``-order``
    transform of a centered Gaussian window of std ``width`` samples.
    """
    if length < 8:
        raise ValueError("TS length must be >= 8 symbols")
    if abs(order) >= 2:
        raise ValueError("|order| must be < 2")
    n = length * sps
    if width is None:
        width = ts_window_width(n)
    k = np.arange(n) - n // 2
    g = np.exp(-(k**2) / (2 * width**2)).astype(complex)
    g /= np.linalg.norm(g)
    ts = frft(g, -order)
    return ts / np.linalg.norm(ts)


def rrc_taps(rolloff: float, span: int, sps: int) -> np.ndarray:
    """Unit-energy root-raised-cosine taps, ``span * sps + 1`` of them."""
    t = np.arange(-(span * sps) // 2, (span * sps) // 2 + 1) / sps
    b = rolloff
    h = np.empty_like(t)
    for i, ti in enumerate(t):
        if abs(ti) < 1e-12:
            h[i] = 1 + b * (4 / np.pi - 1)
        elif b > 0 and abs(abs(ti) - 1 / (4 * b)) < 1e-9:
            h[i] = b / np.sqrt(2) * (
                (1 + 2 / np.pi) * np.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
            )
        else:
            h[i] = (np.sin(np.pi * ti * (1 - b)) + 4 * b * ti * np.cos(np.pi * ti * (1 + b))) / (
                np.pi * ti * (1 - (4 * b * ti) ** 2)
            )
    return h / np.linalg.norm(h)


def rrc_filter(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Zero-delay linear filtering along the last axis (output length = input)."""
    y = sps.fftconvolve(x, taps[None, :] if np.ndim(x) == 2 else taps, mode="full", axes=-1)
    d = (taps.size - 1) // 2
    return y[..., d : d + np.shape(x)[-1]]


def rrc_shape(symbols, layout: FrameLayout):
    """Upsample by ``layout.sps`` and RRC-filter.

    A 1-D symbol array gives a :class:`ComplexSignal`; a ``(2, n)`` array gives
    a :class:`DualPolSignal`.
    """
    s = np.asarray(symbols, dtype=complex)
    if s.size == 0:
        raise ValueError("symbols must be nonempty")
    up = np.zeros(s.shape[:-1] + (s.shape[-1] * layout.sps,), dtype=complex)
    up[..., :: layout.sps] = s
    y = rrc_filter(up, rrc_taps(layout.rolloff, layout.rrc_span, layout.sps))
    if s.ndim == 1:
        return ComplexSignal(y, layout.sample_rate)
    return DualPolSignal(y, layout.sample_rate)


def dbm_to_watt(p_dbm: float) -> float:
    return 1e-3 * 10 ** (p_dbm / 10)


def assemble_frame(ts, payload: DualPolSignal, launch_power_dbm: float | None = None) -> DualPolSignal:
    """Time-multiplex the TS ahead of the payload on both polarizations.

    The TS is scaled to the payload's mean per-polarization power, then the
    whole frame is scaled so that the mean of ``|x|^2 + |y|^2`` equals the
    launch power (W). With ``launch_power_dbm=None`` only the TS is rescaled.
    """
    if isinstance(ts, ComplexSignal):
        if ts.sample_rate != payload.sample_rate:
            raise ValueError("TS and payload sample rates differ")
        ts = ts.samples
    ts = np.asarray(ts, dtype=complex)
    pol_power = np.mean(np.abs(payload.fields) ** 2)
    ts_scaled = ts * np.sqrt(pol_power * ts.size / np.sum(np.abs(ts) ** 2))
    fields = np.concatenate([np.stack([ts_scaled, ts_scaled]), payload.fields], axis=1)
    frame = DualPolSignal(fields, payload.sample_rate)
    if launch_power_dbm is not None:
        frame = frame.with_fields(fields * np.sqrt(dbm_to_watt(launch_power_dbm) / frame.mean_power))
    return frame


def extract_ts(frame: DualPolSignal, layout: FrameLayout, offset: int = 0) -> DualPolSignal:
    """Leading TS samples of ``frame`` (from ``offset``), at exactly 2 samples/symbol."""
    target_rate = 2 * layout.symbol_rate
    ratio = frame.sample_rate / target_rate
    n_in = int(round(layout.ts_symbols * 2 * ratio))
    if offset < 0 or offset + n_in > len(frame):
        raise ValueError("frame too short for the TS layout")
    seg = frame.fields[:, offset : offset + n_in]
    if n_in != layout.ts_symbols * 2:
        seg = sps.resample(seg, layout.ts_symbols * 2, axis=-1)
    return DualPolSignal(seg, target_rate)


@dataclass
class Transmitter:
    """Convenience bundle: symbols and frame for one channel."""

    symbols: np.ndarray
    frame: DualPolSignal
    ts: np.ndarray = field(repr=False)


def build_transmitter(layout: FrameLayout, seed: int, launch_power_dbm: float | None) -> Transmitter:
    symbols = generate_qpsk_symbols(seed, layout.payload_symbols)
    ts = generate_ts(layout.ts_order, layout.ts_symbols, layout.sps)
    payload = rrc_shape(symbols, layout)
    return Transmitter(symbols, assemble_frame(ts, payload, launch_power_dbm), ts)

"""Fiber link simulation: WDM multiplexing, split-step propagation over
amplified spans, lumped PMD emulation, ASE loading and ground-truth labels.

Units: delays in ps, angular frequency grids in rad/ps, dispersion in ps/nm,
fields in sqrt(W).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal as sps
from scipy.special import erf

from .signals import DualPolSignal

C_LIGHT = 299_792_458.0
B_REF = 12.5e9


@dataclass(frozen=True)
class PmdConfig:
    n_segments: int = 20
    mean_dgd_ps: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_segments < 1:
            raise ValueError("n_segments must be >= 1")
        if self.mean_dgd_ps < 0:
            raise ValueError("mean_dgd_ps must be >= 0")


@dataclass(frozen=True)
class LinkConfig:
    n_channels: int = 3
    symbol_rate: float = 50e9
    channel_spacing: float = 75e9
    spans: int = 1
    span_length_km: float = 100.0
    attenuation_db_km: float = 0.2
    dispersion_ps_nm_km: float = 17.0
    gamma: float = 2.6
    launch_power_dbm: float = 2.0
    target_osnr_db: float = 20.0
    pmd: PmdConfig = field(default_factory=PmdConfig)
    ssfm_steps_per_span: int = 16
    wavelength_nm: float = 1550.0
    obpf_bandwidth: float = 75e9
    manakov_factor: float = 8.0 / 9.0
    rolloff: float = 0.02

    def __post_init__(self):
        if not 1 <= self.n_channels <= 5:
            raise ValueError("n_channels must be in 1..5")
        if self.spans < 1:
            raise ValueError("spans must be >= 1")
        for name in ("symbol_rate", "channel_spacing", "span_length_km", "wavelength_nm", "obpf_bandwidth"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("attenuation_db_km", "dispersion_ps_nm_km", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.ssfm_steps_per_span < 1:
            raise ValueError("ssfm_steps_per_span must be >= 1")

    @property
    def alpha_per_km(self) -> float:
        """Power attenuation coefficient in 1/km."""
        return self.attenuation_db_km * np.log(10) / 10

    @property
    def accumulated_cd(self) -> float:
        return self.spans * self.span_length_km * self.dispersion_ps_nm_km

    @property
    def wdm_bandwidth(self) -> float:
        return (self.n_channels - 1) * self.channel_spacing + self.symbol_rate * (1 + self.rolloff)

    def wdm_sps(self) -> int:
        """Smallest integer samples/symbol covering twice the WDM bandwidth."""
        return max(2, int(np.ceil(2 * self.wdm_bandwidth / self.symbol_rate - 1e-9)))


def omega_grid(n: int, sample_rate: float) -> np.ndarray:
    """FFT-ordered angular frequency grid in rad/ps."""
    return 2 * np.pi * np.fft.fftfreq(n, d=1.0 / sample_rate) * 1e-12


def cd_transfer(freqs_hz: np.ndarray, d_total: float, wavelength_nm: float = 1550.0) -> np.ndarray:
    lam = wavelength_nm * 1e-9
    d_si = d_total * 1e-3  # ps/nm -> s/m
    return np.exp(-1j * np.pi * lam**2 * d_si * freqs_hz**2 / C_LIGHT)


def apply_cd(sig: DualPolSignal, d_total: float, wavelength_nm: float = 1550.0) -> DualPolSignal:
    """All-pass quadratic-phase chromatic dispersion of ``d_total`` ps/nm."""
    if not np.isfinite(d_total):
        raise ValueError("d_total must be finite")
    if d_total == 0:
        return sig
    f = np.fft.fftfreq(len(sig), d=1.0 / sig.sample_rate)
    h = cd_transfer(f, d_total, wavelength_nm)
    return sig.with_fields(np.fft.ifft(np.fft.fft(sig.fields, axis=-1) * h, axis=-1))


# --- PMD ---------------------------------------------------------------------


def segment_dgd(l_km: float, d_pmd: float) -> float:
    """DGD (ps) of one birefringent segment of ``l_km`` with PMD parameter ``d_pmd`` (ps/sqrt(km))."""
    if l_km <= 0:
        raise ValueError("l_km must be positive")
    if d_pmd < 0:
        raise ValueError("d_pmd must be non-negative")
    return float(np.sqrt(3 * np.pi * l_km / 8) * d_pmd)


@dataclass(frozen=True)
class JonesTransfer:
    """Per-frequency 2x2 Jones matrices on an FFT-ordered ``omega`` grid (rad/ps)."""

    omega: np.ndarray
    matrices: np.ndarray
    alphas: np.ndarray
    gammas: np.ndarray
    dtaus: np.ndarray
    phases: np.ndarray

    @property
    def u1(self) -> np.ndarray:
        return self.matrices[:, 0, 0]

    @property
    def u2(self) -> np.ndarray:
        return self.matrices[:, 0, 1]


def _rotation(alpha: float, gamma: float) -> np.ndarray:
    c, s = np.cos(alpha), np.sin(alpha)
    return np.array([[c, -np.exp(-1j * gamma) * s], [np.exp(1j * gamma) * s, c]])


def _segment(alpha, gamma, dtau, phase, omega):
    r = _rotation(alpha, gamma)
    d = np.exp(0.5j * (omega * dtau + phase))
    # r @ diag(d, conj d) @ r^H, vectorized over omega
    a = r[:, 0][None, :, None] * r.conj()[:, 0][None, None, :] * d[:, None, None]
    b = r[:, 1][None, :, None] * r.conj()[:, 1][None, None, :] * d.conj()[:, None, None]
    return a + b


def cascade_transfer(alphas, gammas, dtaus, omega, phases=None) -> JonesTransfer:
    """Product of waveplate sections ``R D(omega) R^-1`` in the given order.

    ``phases`` are per-section retardations at the carrier (the ``omega = 0``
    point of the baseband grid); zero if omitted.
    """
    alphas, gammas, dtaus = (np.asarray(v, dtype=float) for v in (alphas, gammas, dtaus))
    phases = np.zeros_like(dtaus) if phases is None else np.asarray(phases, dtype=float)
    omega = np.asarray(omega, dtype=float)
    u = np.broadcast_to(np.eye(2, dtype=complex), (omega.size, 2, 2)).copy()
    for a, g, t, p in zip(alphas, gammas, dtaus, phases):
        u = u @ _segment(a, g, t, p, omega)
    return JonesTransfer(omega, u, alphas, gammas, dtaus, phases)


def build_pmd_cascade(cfg: PmdConfig, omega) -> JonesTransfer:
    """Random ``cfg.n_segments``-section cascade with Maxwellian mean DGD ``cfg.mean_dgd_ps``.

    Axis angles, phases and carrier retardations are uniform on [0, 2pi).
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_segments
    alphas = rng.uniform(0, 2 * np.pi, n)
    gammas = rng.uniform(0, 2 * np.pi, n)
    phases = rng.uniform(0, 2 * np.pi, n)
    dtau = cfg.mean_dgd_ps * np.sqrt(3 * np.pi / (8 * n))
    return cascade_transfer(alphas, gammas, np.full(n, dtau), omega, phases)


def compute_dgd(u: JonesTransfer, omega0: float = 0.0) -> float:
    """DGD (ps) from central differences of the Cayley-Klein entries at ``omega0``."""
    order = np.argsort(u.omega)
    w = u.omega[order]
    k = int(np.argmin(np.abs(w - omega0)))
    if k == 0 or k == w.size - 1:
        raise ValueError("frequency grid must bracket omega0")
    lo, hi = order[k - 1], order[k + 1]
    dw = w[k + 1] - w[k - 1]
    du1 = (u.u1[hi] - u.u1[lo]) / dw
    du2 = (u.u2[hi] - u.u2[lo]) / dw
    dgd = 2 * np.sqrt(abs(du1) ** 2 + abs(du2) ** 2)
    # truncation error of the central difference ~ (dw/2 * dgd)^2 / 6
    if (0.5 * dw * dgd) ** 2 / 6 > 1e-3:
        warnings.warn("frequency grid too coarse for an accurate DGD estimate", RuntimeWarning)
    return float(dgd)


def cascade_derivative(alphas, gammas, dtaus, omega0: float, phases=None):
    """Jones matrix and its exact omega-derivative at a single frequency."""
    phases = np.zeros(len(dtaus)) if phases is None else phases
    u = np.eye(2, dtype=complex)
    du = np.zeros((2, 2), dtype=complex)
    for a, g, t, p in zip(alphas, gammas, dtaus, phases):
        r = _rotation(a, g)
        e = np.exp(0.5j * (omega0 * t + p))
        m = r @ np.diag([e, e.conjugate()]) @ r.conj().T
        dm = r @ np.diag([0.5j * t * e, -0.5j * t * e.conjugate()]) @ r.conj().T
        du = du @ m + u @ dm
        u = u @ m
    return u, du


def group_delay_spread(u: np.ndarray, du: np.ndarray) -> float:
    """``|tau_+ - tau_-|`` of the Hermitian group-delay operator ``j dU U^H``."""
    op = 1j * du @ u.conj().T
    ev = np.linalg.eigvalsh(0.5 * (op + op.conj().T))
    return float(ev[-1] - ev[0])


def maxwellian_pdf(x, mean: float):
    """Normalized Maxwellian density of DGD with mean ``mean`` (1/ps)."""
    if not mean > 0:
        raise ValueError("mean must be positive")
    x = np.asarray(x, dtype=float)
    return 32 * x**2 / (np.pi**2 * mean**3) * np.exp(-4 * x**2 / (np.pi * mean**2))


def maxwellian_cdf(x, mean: float):
    if not mean > 0:
        raise ValueError("mean must be positive")
    x = np.asarray(x, dtype=float)
    a = mean * np.sqrt(np.pi / 8)
    z = x / a
    return erf(z / np.sqrt(2)) - np.sqrt(2 / np.pi) * z * np.exp(-(z**2) / 2)


def apply_jones(sig: DualPolSignal, u: JonesTransfer) -> DualPolSignal:
    """Apply the per-frequency Jones matrices to the polarization spectra."""
    if u.matrices.shape[0] != len(sig):
        raise ValueError("Jones grid length does not match the signal")
    spec = np.fft.fft(sig.fields, axis=-1)
    out = np.einsum("kij,jk->ik", u.matrices, spec)
    return sig.with_fields(np.fft.ifft(out, axis=-1))


# --- ASE ---------------------------------------------------------------------


def add_ase(
    sig: DualPolSignal,
    target_osnr_db: float,
    symbol_rate: float,
    b_ref: float = B_REF,
    rng: np.random.Generator | None = None,
) -> DualPolSignal:
    """Load white circular Gaussian ASE so that ``P_sig / P_ASE(b_ref)`` hits the target.

    The noise PSD is flat over the full sample bandwidth and split equally
    between polarizations. ``target_osnr_db = inf`` returns the input.
    ``symbol_rate`` is kept for the interface; the injected PSD does not depend
    on it.
    """
    if np.isposinf(target_osnr_db):
        return sig
    if not np.isfinite(target_osnr_db):
        raise ValueError("target_osnr_db must be finite or +inf")
    rng = np.random.default_rng() if rng is None else rng
    psd = sig.mean_power / (10 ** (target_osnr_db / 10) * b_ref)  # W/Hz, both pols
    var = psd * sig.sample_rate / 2  # per polarization, complex
    noise = rng.normal(size=(2, len(sig))) + 1j * rng.normal(size=(2, len(sig)))
    return sig.with_fields(sig.fields + noise * np.sqrt(var / 2))


# --- split-step propagation -------------------------------------------------------


def ssfm_propagate(wdm: DualPolSignal, cfg: LinkConfig, rng=None) -> DualPolSignal:
    """Symmetric split-step Manakov propagation over ``cfg.spans`` amplified spans.

    Each step is a linear half step (dispersion + loss), a Kerr phase
    ``gamma * manakov_factor * |E|^2 * dz_eff`` and another linear half step.
    ``dz_eff`` makes the Kerr phase integrate the exponentially decaying
    power exactly. A noiseless EDFA restores the span loss. ``rng`` is unused
    (0 dB noise figure).
    """
    del rng
    if cfg.ssfm_steps_per_span < 8:
        raise ValueError("ssfm_steps_per_span must be >= 8")
    if wdm.sample_rate < 2 * cfg.wdm_bandwidth * (1 - 1e-9):
        raise ValueError("WDM field undersampled: need >= 2x the occupied bandwidth")
    n = len(wdm)
    dz = cfg.span_length_km / cfg.ssfm_steps_per_span
    alpha = cfg.alpha_per_km
    f = np.fft.fftfreq(n, d=1.0 / wdm.sample_rate)
    half = cd_transfer(f, cfg.dispersion_ps_nm_km * dz / 2, cfg.wavelength_nm) * np.exp(-alpha * dz / 4)
    dz_eff = dz if alpha == 0 else 2 * np.sinh(alpha * dz / 2) / alpha
    # 1/km * W^-1 with fields in sqrt(W)
    kerr = cfg.gamma * cfg.manakov_factor * dz_eff
    gain = np.exp(alpha * cfg.span_length_km / 2)
    spec = np.fft.fft(wdm.fields, axis=-1)
    for _ in range(cfg.spans):
        for _ in range(cfg.ssfm_steps_per_span):
            spec *= half
            if kerr:
                e = np.fft.ifft(spec, axis=-1)
                p = np.sum(np.abs(e) ** 2, axis=0)
                e *= np.exp(1j * kerr * p)
                spec = np.fft.fft(e, axis=-1)
            spec *= half
        spec *= gain
    return wdm.with_fields(np.fft.ifft(spec, axis=-1))


# --- link ---------------------------------------------------------------------


def channel_offsets(cfg: LinkConfig) -> np.ndarray:
    """Carrier offsets (Hz) with the channel under test at 0."""
    return (np.arange(cfg.n_channels) - cfg.n_channels // 2) * cfg.channel_spacing


def multiplex(frames, cfg: LinkConfig) -> DualPolSignal:
    if len(frames) != cfg.n_channels:
        raise ValueError("need one frame per channel")
    rate = frames[0].sample_rate
    n = len(frames[0])
    sps_in = rate / cfg.symbol_rate
    if any(len(f) != n or f.sample_rate != rate for f in frames):
        raise ValueError("all channel frames must share length and rate")
    if abs(sps_in - round(sps_in)) > 1e-9:
        raise ValueError("frame rate must be an integer multiple of the symbol rate")
    up = cfg.wdm_sps()
    n_out = int(round(n * up / sps_in))
    fs = up * cfg.symbol_rate
    t = np.arange(n_out) / fs
    total = np.zeros((2, n_out), dtype=complex)
    for frame, off in zip(frames, channel_offsets(cfg)):
        total += sps.resample(frame.fields, n_out, axis=-1) * np.exp(2j * np.pi * off * t)
    return DualPolSignal(total, fs)


def demultiplex(wdm: DualPolSignal, cfg: LinkConfig, n_out: int) -> DualPolSignal:
    """Ideal band-pass of ``cfg.obpf_bandwidth`` around the center channel, resampled to ``n_out``."""
    n = len(wdm)
    spec = np.fft.fft(wdm.fields, axis=-1)
    f = np.fft.fftfreq(n, d=1.0 / wdm.sample_rate)
    spec[:, np.abs(f) > cfg.obpf_bandwidth / 2] = 0
    out_rate = wdm.sample_rate * n_out / n
    if cfg.obpf_bandwidth > out_rate:
        raise ValueError("output rate cannot carry the OBPF passband")
    keep = np.fft.fftfreq(n_out, d=1.0 / out_rate)
    idx = np.round(keep * n / wdm.sample_rate).astype(int) % n
    sel = spec[:, idx]
    if n_out % 2 == 0 and n > n_out:
        # the output Nyquist bin collects both +-out_rate/2 input bins
        sel[:, n_out // 2] += spec[:, n_out // 2]
    out = np.fft.ifft(sel, axis=-1) * (n_out / n)
    return DualPolSignal(out, out_rate)


@dataclass
class ChannelRealization:
    received: DualPolSignal
    labels: dict
    seed: int
    pmd: JonesTransfer | None = field(default=None, repr=False)


def run_link(cfg: LinkConfig, frames, seed: int) -> ChannelRealization:
    """Tx frames (one per channel, center channel under test) -> received center channel.

    Order: multiplex, SSFM over the spans, OBPF/demultiplex, PMD emulator, ASE.
    Labels: ``cd_ps_per_nm`` from the span count, ``dgd_ps`` realized by the
    cascade at the carrier, ``osnr_db`` = target. ``snr_nl_db`` is left to the
    receiver.
    """
    frames = list(frames)
    if isinstance(frames[0], np.ndarray):
        raise TypeError("frames must be DualPolSignal instances")
    pmd_seq, ase_seq = np.random.SeedSequence([int(seed), int(cfg.pmd.seed)]).spawn(2)
    wdm = multiplex(frames, cfg)
    wdm = ssfm_propagate(wdm, cfg)
    rx = demultiplex(wdm, cfg, len(frames[0]))
    pmd_cfg = replace(cfg.pmd, seed=int(pmd_seq.generate_state(1)[0]))
    u = build_pmd_cascade(pmd_cfg, omega_grid(len(rx), rx.sample_rate))
    rx = apply_jones(rx, u)
    dgd = compute_dgd(u, 0.0)
    rx = add_ase(rx, cfg.target_osnr_db, cfg.symbol_rate, rng=np.random.default_rng(ase_seq))
    labels = {
        "snr_nl_db": None,
        "osnr_db": float(cfg.target_osnr_db),
        "cd_ps_per_nm": float(cfg.accumulated_cd),
        "dgd_ps": dgd,
    }
    return ChannelRealization(rx, labels, seed, u)

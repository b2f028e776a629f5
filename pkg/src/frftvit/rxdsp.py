"""Coherent receiver DSP and the GSNR / OSNR / SNR_NL label algebra."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .channel import B_REF, apply_cd
from .signals import DualPolSignal, FrameLayout, rrc_filter, rrc_taps

GSNR_SATURATION_DB = 60.0
SNR_NL_CEILING_DB = 40.0


class ConvergenceError(RuntimeError):
    """Adaptive equalizer diverged."""


@dataclass(frozen=True)
class SnrBreakdown:
    gsnr_db: float
    snr_ase_db: float
    snr_nl_db: float
    osnr_db: float
    clamped: bool = False


def db(x):
    return 10 * np.log10(x)


def undb(x):
    return 10 ** (np.asarray(x, dtype=float) / 10)


# --- label algebra ---------------------------------------------------------------


def osnr_to_snr_ase(osnr_db: float, symbol_rate: float, b_ref: float = B_REF) -> float:
    """SNR from ASE alone: ``OSNR * b_ref / symbol_rate`` in the linear domain."""
    if not symbol_rate > 0:
        raise ValueError("symbol_rate must be positive")
    return float(osnr_db + db(b_ref / symbol_rate))


def combine_gsnr(snr_nl_db: float, snr_ase_db: float) -> float:
    """``1/GSNR = 1/SNR_NL + 1/SNR_ASE`` in dB."""
    return float(-db(undb(-snr_nl_db) + undb(-snr_ase_db)))


def derive_snr_nl(gsnr_db: float, snr_ase_db: float, ceiling_db: float = SNR_NL_CEILING_DB):
    """Invert ``1/GSNR = 1/SNR_NL + 1/SNR_ASE`` for SNR_NL.

    Returns ``(snr_nl_db, clamped)``. When the nonlinear contribution is not
    resolvable (``gsnr >= snr_ase`` or below ``1/ceiling``) the value is clamped
    to ``ceiling_db`` and ``clamped`` is True.
    """
    inv = undb(-gsnr_db) - undb(-snr_ase_db)
    if not inv > undb(-ceiling_db):
        return float(ceiling_db), True
    return float(-db(inv)), False


def snr_breakdown(gsnr_db, osnr_db, symbol_rate, b_ref=B_REF, ceiling_db=SNR_NL_CEILING_DB) -> SnrBreakdown:
    snr_ase = osnr_to_snr_ase(osnr_db, symbol_rate, b_ref) if np.isfinite(osnr_db) else np.inf
    snr_nl, clamped = derive_snr_nl(gsnr_db, snr_ase, ceiling_db)
    return SnrBreakdown(float(gsnr_db), float(snr_ase), snr_nl, float(osnr_db), clamped)


# --- DSP blocks --------------------------------------------------------------------


def cd_compensate(sig: DualPolSignal, d_total: float, wavelength_nm: float = 1550.0) -> DualPolSignal:
    """Exact inverse of :func:`frftvit.channel.apply_cd`."""
    return apply_cd(sig, -d_total, wavelength_nm)


def normalize_power(fields: np.ndarray) -> np.ndarray:
    """Scale each row to unit mean power."""
    p = np.mean(np.abs(fields) ** 2, axis=-1, keepdims=True)
    return fields / np.sqrt(np.where(p > 0, p, 1.0))


@numba.njit(cache=True)
def _cma_kernel(x, w, mu, passes, radius):
    n_sym = x.shape[1] // 2
    taps = w.shape[2]
    c = taps // 2
    n = x.shape[1]
    y = np.zeros((2, n_sym), dtype=np.complex128)
    win = np.zeros((2, taps), dtype=np.complex128)
    for _ in range(passes):
        for k in range(n_sym):
            centre = 2 * k
            for q in range(2):
                for i in range(taps):
                    j = centre + i - c
                    win[q, i] = x[q, j] if 0 <= j < n else 0.0
            for p in range(2):
                acc = 0.0 + 0.0j
                for q in range(2):
                    for i in range(taps):
                        acc += w[p, q, i] * win[q, i]
                y[p, k] = acc
                err = acc * (radius - (acc.real * acc.real + acc.imag * acc.imag))
                for q in range(2):
                    for i in range(taps):
                        w[p, q, i] += mu * err * np.conj(win[q, i])
    return y


def _outputs_collapsed(y: np.ndarray, threshold: float = 0.5) -> bool:
    """True when the two equalizer outputs carry the same stream (up to lag/phase)."""
    a, b = y[0] - y[0].mean(), y[1] - y[1].mean()
    den = np.linalg.norm(a) * np.linalg.norm(b)
    if den == 0:
        return False
    xc = np.fft.ifft(np.fft.fft(a) * np.conj(np.fft.fft(b)))
    lags = np.r_[0:9, -8:0]
    return bool(np.max(np.abs(xc[lags])) / den > threshold)


DEFAULT_CMA_SCHEDULE = (1e-2, 3e-3, 1e-3, 3e-4, 1e-4)


def cma_equalize(sig, taps: int = 13, mu=DEFAULT_CMA_SCHEDULE, iters: int = 2, radius: float = 1.0):
    """2x2 butterfly CMA equalizer, 2 samples/symbol in, 1 out.

    Parameters
    ----------
    sig : DualPolSignal or ndarray
        Input at 2 samples/symbol with symbol centers on even indices.
    taps : int
        Odd FIR length per butterfly branch.
    mu : float or sequence of float
        Step size. A sequence gives one pass per entry (annealed schedule)
        and ``iters`` is ignored.
    iters : int
        Passes over the block when ``mu`` is a scalar.

    Returns
    -------
    y : ndarray, shape (2, n_symbols)
        Output of the last pass.
    w : ndarray, shape (2, 2, taps)
        Final taps.
    """
    x = np.asarray(getattr(sig, "fields", sig), dtype=np.complex128)
    if taps % 2 == 0 or taps < 1:
        raise ValueError("taps must be a positive odd integer")
    schedule = [float(mu)] * int(iters) if np.isscalar(mu) else [float(m) for m in mu]
    if not schedule or any(not m > 0 for m in schedule):
        raise ValueError("step sizes must be positive and at least one pass is required")
    x = normalize_power(x)
    w = np.zeros((2, 2, taps), dtype=np.complex128)
    w[0, 0, taps // 2] = 1.0
    w[1, 1, taps // 2] = 1.0
    for m in schedule:
        y = _cma_kernel(x, w, m, 1, float(radius))
    if _outputs_collapsed(y):
        # both rows locked to one source: restart row 1 orthogonal to row 0
        w[1, 0] = -np.conj(w[0, 1, ::-1])
        w[1, 1] = np.conj(w[0, 0, ::-1])
        for m in schedule[1:] or schedule:
            y = _cma_kernel(x, w, m, 1, float(radius))
    with np.errstate(over="ignore", invalid="ignore"):
        p_out = np.mean(np.abs(y) ** 2)
    if not np.isfinite(p_out) or p_out > 10 * np.mean(np.abs(x) ** 2):
        raise ConvergenceError("CMA diverged: output power exceeds 10x input")
    return y, w


def data_aided_equalize(sig, tx_symbols: np.ndarray, taps: int = 41):
    """Least-squares 2x2 butterfly FIR fitted to the known transmitted symbols.

    The fit is convex, so unlike CMA it cannot lock both outputs onto one
    source, and a long filter covers large DGD. Returns ``(y, n_params)``
    where ``n_params`` is the number of complex coefficients per output,
    needed to remove the in-sample fitting bias from error-power estimates.
    """
    x = np.asarray(getattr(sig, "fields", sig), dtype=np.complex128)
    tx = np.atleast_2d(np.asarray(tx_symbols, dtype=np.complex128))
    if taps % 2 == 0 or taps < 1:
        raise ValueError("taps must be a positive odd integer")
    n_sym = x.shape[1] // 2
    if tx.shape != (2, n_sym):
        raise ValueError("tx_symbols must have shape (2, n_samples // 2)")
    if n_sym < 4 * taps:
        raise ValueError("block too short for the requested number of taps")
    c = taps // 2
    xp = np.pad(normalize_power(x), ((0, 0), (c, c)))
    win = sliding_window_view(xp, taps, axis=1)[:, : 2 * n_sym : 2, :]
    a = np.concatenate([win[0], win[1]], axis=1)
    w, *_ = np.linalg.lstsq(a, tx.T, rcond=None)
    return (a @ w).T, 2 * taps


def phase_derotate(symbols: np.ndarray, block: int = 64, reference: np.ndarray | None = None) -> np.ndarray:
    """Blockwise 4th-power (Viterbi-Viterbi) carrier phase removal for QPSK.

    With ``reference`` (aligned transmitted symbols), the residual 90-degree
    ambiguity is resolved per row by maximizing the correlation.
    """
    s = np.atleast_2d(np.asarray(symbols, dtype=complex))
    out = np.empty_like(s)
    n = s.shape[1]
    n_blocks = max(1, int(np.ceil(n / block)))
    for r in range(s.shape[0]):
        acc = np.array([np.sum(s[r, b * block : (b + 1) * block] ** 4) for b in range(n_blocks)])
        # QPSK points at 45 deg: s**4 sits at pi
        est = np.unwrap(np.angle(-acc)) / 4
        phase = np.repeat(est, block)[:n]
        out[r] = s[r] * np.exp(-1j * phase)
    if reference is not None:
        ref = np.atleast_2d(reference)
        for r in range(out.shape[0]):
            scores = [np.real(np.vdot(ref[r], out[r] * 1j**k)) for k in range(4)]
            out[r] *= 1j ** int(np.argmax(scores))
    return out.reshape(np.shape(symbols))


def align_to_reference(rx: np.ndarray, tx: np.ndarray, max_lag: int = 16):
    """Match each received stream to a transmitted polarization and lag.

    Returns ``(tx_aligned, assignments)`` where ``tx_aligned[p]`` is the
    circularly shifted transmitted row that best correlates with ``rx[p]`` and
    ``assignments[p] = (q, lag)``.
    """
    n = rx.shape[1]
    lags = np.r_[0 : max_lag + 1, -max_lag:0]
    out = np.empty_like(rx)
    assignments = []
    for p in range(rx.shape[0]):
        best = (-1.0, 0, 0)
        for q in range(tx.shape[0]):
            xc = np.fft.ifft(np.fft.fft(rx[p]) * np.conj(np.fft.fft(tx[q])))
            mags = np.abs(xc[lags % n])
            k = int(np.argmax(mags))
            if mags[k] > best[0]:
                best = (mags[k], q, int(lags[k]))
        _, q, lag = best
        out[p] = np.roll(tx[q], lag)
        assignments.append((q, lag))
    return out, assignments


def measure_gsnr(tx_symbols, rx_symbols, saturation_db: float = GSNR_SATURATION_DB) -> float:
    """Data-aided GSNR (dB) from aligned transmitted and received symbols.

    Each row of ``rx`` is scaled back onto ``tx`` by the complex gain ``c``
    fitted in ``rx ~ c * tx``, so ``tx - rx / c`` is the total additive
    distortion (ASE + NLI + residual DSP error).
    """
    tx = np.atleast_2d(np.asarray(tx_symbols, dtype=complex))
    rx = np.atleast_2d(np.asarray(rx_symbols, dtype=complex))
    if tx.shape != rx.shape:
        raise ValueError("tx and rx lengths differ")
    if tx.shape[1] < 1000:
        raise ValueError("need at least 1000 symbols")
    sig = 0.0
    err = 0.0
    for t, r in zip(tx, rx):
        c = np.vdot(t, r) / np.vdot(t, t)
        if c == 0:
            return -np.inf
        sig += np.sum(np.abs(t) ** 2)
        err += np.sum(np.abs(t - r / c) ** 2)
    if err <= sig * 10 ** (-saturation_db / 10):
        return float(saturation_db)
    return float(db(sig / err))


def evm(tx_symbols, rx_symbols) -> float:
    """RMS error vector magnitude after per-row complex LS scaling of rx onto tx."""
    tx = np.atleast_2d(tx_symbols)
    rx = np.atleast_2d(rx_symbols)
    num = den = 0.0
    for t, r in zip(tx, rx):
        c = np.vdot(r, t) / np.vdot(r, r)
        num += np.sum(np.abs(t - c * r) ** 2)
        den += np.sum(np.abs(t) ** 2)
    return float(np.sqrt(num / den))


@dataclass
class RxResult:
    symbols: np.ndarray
    reference: np.ndarray
    gsnr_db: float
    assignments: list
    cma_gsnr_db: float


def receive(
    received: DualPolSignal,
    tx_symbols: np.ndarray,
    layout: FrameLayout,
    cd_ps_nm: float,
    wavelength_nm: float = 1550.0,
    cma_taps: int = 13,
    cma_mu=DEFAULT_CMA_SCHEDULE,
    cma_iters: int = 2,
    refine_taps: int = 41,
    guard: int = 128,
) -> RxResult:
    """Full payload chain and data-aided GSNR.

    Normalize, CD compensation, matched filter, blind CMA, then a data-aided
    least-squares refit of the butterfly (``refine_taps``; 0 disables it),
    phase de-rotation and GSNR. The blind CMA result is kept as
    ``cma_gsnr_db`` for diagnostics. With refinement on, the GSNR is
    corrected for the coefficients fitted on the same block.
    """
    if received.sample_rate != layout.sample_rate:
        raise ValueError("received signal must be at the layout sample rate")
    if layout.sps != 2:
        raise ValueError("receiver expects 2 samples/symbol")
    tx_symbols = np.asarray(tx_symbols)
    sig = received.with_fields(normalize_power(received.fields))
    sig = cd_compensate(sig, cd_ps_nm, wavelength_nm)
    start = layout.ts_samples
    payload = sig.fields[:, start : start + layout.payload_symbols * layout.sps]
    mf = rrc_filter(payload, rrc_taps(layout.rolloff, layout.rrc_span, layout.sps))
    keep = slice(guard, layout.payload_symbols - guard)

    try:
        y, _ = cma_equalize(mf, cma_taps, cma_mu, cma_iters)
    except ConvergenceError:
        # retry once with every step size scaled down
        mus = [cma_mu] * cma_iters if np.isscalar(cma_mu) else list(cma_mu)
        y, _ = cma_equalize(mf, cma_taps, [m / 10 for m in mus] + [mus[-1]] * 2)
    y = phase_derotate(y)
    ref, assignments = align_to_reference(y, tx_symbols)
    y = phase_derotate(y, reference=ref)
    cma_gsnr = measure_gsnr(ref[:, keep], y[:, keep])
    if not refine_taps:
        return RxResult(y[:, keep], ref[:, keep], cma_gsnr, assignments, cma_gsnr)

    y, n_params = data_aided_equalize(mf, tx_symbols, refine_taps)
    y = phase_derotate(y, reference=tx_symbols)
    gsnr = measure_gsnr(tx_symbols[:, keep], y[:, keep])
    if gsnr < GSNR_SATURATION_DB:
        gsnr = min(gsnr + float(db(1 - n_params / layout.payload_symbols)), GSNR_SATURATION_DB)
    return RxResult(y[:, keep], tx_symbols[:, keep], gsnr, [(0, 0), (1, 0)], cma_gsnr)

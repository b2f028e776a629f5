"""Discrete fractional Fourier transform.

Signals of length ``N`` are read as samples of a continuous function on the
dimensionless grid ``t_n = (n - N//2) / sqrt(N)``. On that grid the order-1
transform is exactly the centered unitary DFT and the order-``a`` transform
approximates

    X_a(u) = A_a * integral exp(j*pi*(cot(al)*t**2 - 2*csc(al)*t*u + cot(al)*u**2)) x(t) dt

with ``al = a*pi/2`` and ``A_a = sqrt(1 - j*cot(al))``. This is the
``exp(j(t^2+u^2)/2*cot - j*t*u/sin)/sqrt(2*pi)`` kernel after the substitution
``t -> sqrt(2*pi)*t``; magnitudes and unitarity are identical.

The fast path is the chirp decomposition (chirp multiply, chirp convolution,
chirp multiply) on a 2x band-limited interpolation of the input, used for
``0.5 <= |a| <= 1``. All other orders are reached by composing with the exact
``a = +-1`` (centered DFT/IDFT) and ``a = 2`` (reversal) branches.
"""

from __future__ import annotations

import functools
import math

import numpy as np
from scipy import fft as sfft
from scipy import signal as sps

MIN_LENGTH = 8
# orders this close to 0 or +-2 short-circuit to identity / reversal
SINGULAR_TOL = 1e-6
# exact DFT branch for orders this close to +-1
UNIT_TOL = 1e-9
ORACLE_MAX_LENGTH = 1024
ORACLE_SINGULAR_TOL = 0.05


def reduce_order(a: float) -> float:
    """Map ``a`` into ``(-2, 2]`` using the period-4 property."""
    a = math.fmod(float(a), 4.0)
    if a > 2.0:
        a -= 4.0
    elif a <= -2.0:
        a += 4.0
    return a


def centered_dft(x: np.ndarray) -> np.ndarray:
    """Unitary DFT with the time and frequency origins at index ``N//2``."""
    n = x.shape[-1]
    return np.fft.fftshift(
        np.fft.fft(np.fft.ifftshift(x, axes=-1), axis=-1), axes=-1
    ) / np.sqrt(n)


def centered_idft(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    return np.fft.fftshift(
        np.fft.ifft(np.fft.ifftshift(x, axes=-1), axis=-1), axes=-1
    ) * np.sqrt(n)


def reverse(x: np.ndarray) -> np.ndarray:
    """``x(-t)`` on the centered grid, i.e. ``x[(2*(N//2) - n) % N]``."""
    n = x.shape[-1]
    idx = (2 * (n // 2) - np.arange(n)) % n
    return x[..., idx]


def _check_length(n: int) -> None:
    if n < MIN_LENGTH:
        raise ValueError(f"FrFT length must be >= {MIN_LENGTH}, got {n}")


class FrftPlan:
    """Precomputed chirps for transforms of length ``n`` at order ``a``.

    A plan is immutable after construction and can be shared between threads.
    """

    def __init__(self, n: int, a: float):
        _check_length(n)
        self.n = int(n)
        self.a = float(a)
        r = reduce_order(a)
        self.reduced = r
        # post: exact transform applied after the core (or alone)
        self.core_order: float | None = None
        self.post = None
        if abs(r) < SINGULAR_TOL:
            self.post = None
        elif abs(abs(r) - 2.0) < SINGULAR_TOL:
            self.post = reverse
        elif abs(r - 1.0) < UNIT_TOL:
            self.post = centered_dft
        elif abs(r + 1.0) < UNIT_TOL:
            self.post = centered_idft
        elif 0.5 <= abs(r) <= 1.0:
            self.core_order = r
        elif 0.0 < r < 0.5 or 1.5 < r < 2.0:
            self.core_order, self.post = r - 1.0, centered_dft
        elif -0.5 < r < 0.0 or -2.0 < r < -1.5:
            self.core_order, self.post = r + 1.0, centered_idft
        elif 1.0 < r <= 1.5:
            self.core_order, self.post = r - 2.0, reverse
        else:  # -1.5 <= r < -1
            self.core_order, self.post = r + 2.0, reverse
        if self.core_order is not None:
            self._build_core(self.core_order)

    def _build_core(self, b: float) -> None:
        n = self.n
        alpha = b * np.pi / 2
        delta = 0.5 / np.sqrt(n)
        t = (np.arange(2 * n) - 2 * (n // 2)) * delta
        tan_half = np.tan(alpha / 2)
        csc = 1.0 / np.sin(alpha)
        self._chirp = np.exp(-1j * np.pi * tan_half * t**2)
        lags = np.arange(-(2 * n - 1), 2 * n) * delta
        kernel = np.exp(1j * np.pi * csc * lags**2) * delta
        self._conv_len = sfft.next_fast_len(2 * n + kernel.size - 1)
        self._kernel_f = np.fft.fft(kernel, self._conv_len)
        self._amp = np.sqrt(1.0 - 1j / np.tan(alpha))

    def _core(self, x: np.ndarray) -> np.ndarray:
        n = self.n
        xf = sps.resample(x, 2 * n, axis=-1)
        g = self._chirp * xf
        full = np.fft.ifft(np.fft.fft(g, self._conv_len, axis=-1) * self._kernel_f, axis=-1)
        h = full[..., 2 * n - 1 : 4 * n - 1]
        out = self._amp * self._chirp * h
        return out[..., ::2]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        if x.shape[-1] != self.n:
            raise ValueError(f"plan length {self.n} does not match signal length {x.shape[-1]}")
        if self.core_order is not None:
            x = self._core(x)
        if self.post is not None:
            x = self.post(x)
        return x


@functools.lru_cache(maxsize=256)
def get_plan(n: int, a: float) -> FrftPlan:
    return FrftPlan(n, a)


def frft(x, a: float, plan: FrftPlan | None = None) -> np.ndarray:
    """Fractional Fourier transform of order ``a`` along the last axis.

    Parameters
    ----------
    x : array_like
        Complex samples; leading axes are batch axes (e.g. polarizations).
    a : float
        Transform order; rotation angle is ``a*pi/2``. Taken modulo 4.
    plan : FrftPlan, optional
        Reusable plan. Must match ``len(x)`` and ``a``.

    Returns
    -------
    numpy.ndarray
        Transform with the same shape as ``x``.
    """
    x = np.asarray(x, dtype=complex)
    _check_length(x.shape[-1])
    if plan is None:
        plan = get_plan(x.shape[-1], float(a))
    elif abs(reduce_order(plan.a) - reduce_order(a)) > 1e-12:
        raise ValueError("plan order does not match requested order")
    return plan(x)


def frft_oracle(x, a: float) -> np.ndarray:
    """Direct O(N^2) quadrature of the continuous kernel. Test-scale only.

    The input is band-limited-interpolated onto a grid refined enough that the
    chirped integrand is resolved, then the kernel integral is evaluated as a
    plain Riemann sum at each output point. Orders within 0.05 of an even
    integer use the identity / reversal branch since the kernel is singular
    there.
    """
    x = np.asarray(x, dtype=complex)
    if x.ndim != 1:
        raise ValueError("oracle takes a single 1-D signal")
    n = x.size
    _check_length(n)
    if n > ORACLE_MAX_LENGTH:
        raise ValueError(f"oracle limited to N <= {ORACLE_MAX_LENGTH}")
    r = reduce_order(a)
    if abs(r) < ORACLE_SINGULAR_TOL:
        return x.copy()
    if abs(abs(r) - 2.0) < ORACLE_SINGULAR_TOL:
        return reverse(x)
    alpha = r * np.pi / 2
    cot = np.cos(alpha) / np.sin(alpha)
    csc = 1.0 / np.sin(alpha)
    # refine the grid to resolve the chirp; at cot = 0 the grid sum is already the exact DFT
    m = 1 if abs(cot) < 1e-12 else int(np.ceil(abs(cot) + abs(csc))) + 1
    c = n // 2
    step = 1.0 / np.sqrt(n)
    xf = sps.resample(x, m * n) if m > 1 else x
    t = (np.arange(m * n) / m - c) * step
    u = (np.arange(n) - c) * step
    amp = np.sqrt(1.0 - 1j * cot)
    weighted = xf * np.exp(1j * np.pi * cot * t**2) * (step / m)
    out = np.empty(n, dtype=complex)
    for lo in range(0, n, 64):
        uu = u[lo : lo + 64, None]
        out[lo : lo + 64] = np.exp(-2j * np.pi * csc * uu * t[None, :]) @ weighted
    return amp * np.exp(1j * np.pi * cot * u**2) * out


DEFAULT_SCAN_ORDERS = tuple(np.round(np.linspace(-1.0, 1.0, 41), 10))


def scan_orders(step: float = 0.05, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    """Evenly spaced orders from ``lo`` to ``hi`` inclusive."""
    count = int(round((hi - lo) / step)) + 1
    return np.round(np.linspace(lo, hi, count), 10)


def frft_scan(x, orders=DEFAULT_SCAN_ORDERS) -> np.ndarray:
    """Unit-sum ``|frft(x, a)|**2`` rows for each order.

    ``x`` is an array ``(n_pol, N)`` or anything with a ``fields`` attribute of
    that shape (e.g. :class:`~frftvit.signals.DualPolSignal`). Returns an array of
    shape ``(n_pol, len(orders), N)``.
    """
    data = np.asarray(getattr(x, "fields", x), dtype=complex)
    if data.ndim == 1:
        data = data[None, :]
    orders = np.asarray(orders, dtype=float)
    if orders.size == 0:
        raise ValueError("orders must be nonempty")
    if np.any(np.diff(orders) <= 0):
        raise ValueError("orders must be sorted ascending")
    n = data.shape[-1]
    rows = np.empty((data.shape[0], orders.size, n))
    for k, a in enumerate(orders):
        p = np.abs(frft(data, a)) ** 2
        s = p.sum(axis=-1, keepdims=True)
        rows[:, k, :] = np.divide(p, s, out=np.zeros_like(p), where=s > 0)
    return rows

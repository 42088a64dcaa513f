"""Coefficient tables for the interpolation kernels."""

from functools import lru_cache

import numpy as np


def kaiser_sinc(t, half, beta):
    """Kaiser-windowed sinc evaluated at offsets ``t`` (samples)."""
    t = np.asarray(t, dtype=np.float64)
    arg = np.clip(1.0 - (t / half) ** 2, 0.0, None)
    return np.sinc(t) * np.i0(beta * np.sqrt(arg)) / np.i0(beta)


@lru_cache(maxsize=None)
def sinc_table(n_taps=64, n_phase=4096, beta=8.0):
    """Polyphase table for :func:`sinc_interp`, shape ``(n_phase + 1, n_taps)``.

    Row ``i`` holds the taps for fractional position ``mu = i / n_phase``;
    tap ``j`` multiplies input sample ``floor(p) - n_taps // 2 + 1 + j``.
    """
    if n_taps % 2:
        raise ValueError("n_taps must be even")
    half = n_taps // 2
    mu = np.arange(n_phase + 1)[:, None] / n_phase
    t = np.arange(n_taps)[None, :] - (half - 1) - mu
    table = kaiser_sinc(t, half, beta)
    table.setflags(write=False)
    return table


@lru_cache(maxsize=None)
def farrow_coefficients(n_taps=24, order=7, band=0.8, n_mu=64, n_freq=400):
    """Farrow branch coefficients, shape ``(n_taps, order + 1)``.

    For each of ``n_mu`` fractional delays a least-squares fractional-delay
    filter is fitted over ``|w| <= band * pi``; each tap's response over
    ``mu in [0, 1]`` is then fitted by a degree-``order`` polynomial, so
    ``h_j(mu) = sum_q c[j, q] * mu**q``. Tap ``j`` sits at offset
    ``j - (n_taps // 2 - 1)``.
    """
    if n_taps % 2:
        raise ValueError("n_taps must be even")
    if not 0 < band < 1:
        raise ValueError("band must lie in (0, 1)")
    offsets = np.arange(n_taps) - (n_taps // 2 - 1)
    w = np.linspace(0.0, band * np.pi, n_freq)
    # Chebyshev-spaced delays keep the polynomial fit tight at the interval ends
    mu = (1.0 - np.cos(np.linspace(0.0, np.pi, n_mu))) / 2.0
    basis = np.exp(-1j * np.outer(w, offsets))
    a = np.vstack([basis.real, basis.imag])
    target = np.exp(-1j * np.outer(w, mu))
    b = np.vstack([target.real, target.imag])
    taps = np.linalg.lstsq(a, b, rcond=None)[0]          # (n_taps, n_mu)
    coeffs = np.polynomial.polynomial.polyfit(mu, taps.T, order).T
    coeffs = np.ascontiguousarray(coeffs)
    coeffs.setflags(write=False)
    return coeffs


@lru_cache(maxsize=None)
def lagrange_cubic():
    """Classic 4-tap cubic Lagrange Farrow coefficients (taps at -1, 0, 1, 2)."""
    coeffs = np.array(
        [
            [0.0, -1 / 3, 1 / 2, -1 / 6],
            [1.0, -1 / 2, -1.0, 1 / 2],
            [0.0, 1.0, 1 / 2, -1 / 2],
            [0.0, -1 / 6, 0.0, 1 / 6],
        ]
    )
    coeffs.setflags(write=False)
    return coeffs

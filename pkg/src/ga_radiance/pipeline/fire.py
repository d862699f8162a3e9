"""CSI standardization that strips uniform distortions.

Three steps, applied per measurement:

1. rotate by the conjugate phase of the reference element (first antenna,
   first subcarrier) so the global phase offset is zero;
2. remove the least-squares linear phase slope across subcarriers, one slope
   shared by all antennas (it comes from timing offset, which is common);
3. scale to unit RMS magnitude.

Amplitude and phase ratios between antennas are untouched.
"""

from __future__ import annotations

import numpy as np

from ..scene import SUBCARRIER_INDEX


class DegenerateCSIError(ValueError):
    pass


def subcarrier_positions(n: int) -> np.ndarray:
    """Subcarrier index relative to the first one; the 52-tone grid skips DC."""
    if n == len(SUBCARRIER_INDEX):
        return (SUBCARRIER_INDEX - SUBCARRIER_INDEX[0]).astype(float)
    return np.arange(n, dtype=float)


def phase_slope(h: np.ndarray) -> float:
    """Linear phase slope (rad per subcarrier index) shared by all antennas.

    A coarse slope from the pooled lag-1 correlation is removed first, then
    the residual unwrapped phase gets a pooled least-squares line fit. The
    coarse step makes the estimate track injected slopes exactly even when
    the raw phase is too rough to unwrap.
    """
    h = np.atleast_2d(h)
    k = subcarrier_positions(h.shape[-1])
    adjacent = np.diff(k) == 1
    coarse = float(np.angle(np.sum((h[:, 1:] * np.conj(h[:, :-1]))[:, adjacent])))
    resid = np.unwrap(np.angle(h * np.exp(-1j * coarse * k)), axis=-1)
    kc = k - k.mean()
    fine = float(np.sum(kc * (resid - resid.mean(axis=-1, keepdims=True))) / (h.shape[0] * np.sum(kc * kc)))
    return coarse + fine


def fire_standardize(csi) -> np.ndarray:
    """Standardize a ``(52,)`` or ``(antennas, 52)`` complex CSI array."""
    h = np.array(csi, dtype=complex)
    if not np.any(np.abs(h) > 0):
        raise DegenerateCSIError("cannot standardize an all-zero CSI vector")
    squeeze = h.ndim == 1
    h = np.atleast_2d(h)
    ref = h.flat[0]
    if ref == 0:
        ref = h.flat[np.flatnonzero(np.abs(h) > 0)[0]]
    h = h * np.exp(-1j * np.angle(ref))
    k = subcarrier_positions(h.shape[-1])
    # slope is removed around the first subcarrier so step 1 stays intact
    h = h * np.exp(-1j * phase_slope(h) * k)
    h = h / np.sqrt(np.mean(np.abs(h) ** 2))
    return h[0] if squeeze else h

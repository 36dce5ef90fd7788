"""Pure numpy/scipy versions of the kernels in ``_kernels.pyx``.

Same signatures and semantics; used when the compiled extension is absent
or when ``NASALITY_SI_PURE=1`` is set.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import lfilter


def onepole(x, a, y0):
    x = np.ascontiguousarray(x, dtype=np.float64)
    zi = np.array([a * y0])
    y, _ = lfilter([1.0 - a], [1.0, -a], x, zi=zi)
    return y


def biquad_blocks(x, coefs, block):
    x = np.ascontiguousarray(x, dtype=np.float64)
    coefs = np.asarray(coefs, dtype=np.float64)
    n = x.shape[0]
    if coefs.shape[0] * block < n:
        raise ValueError("not enough coefficient blocks for signal length")
    out = np.empty(n)
    zi = np.zeros(2)
    for j in range(-(-n // block)):
        b0, b1, b2, a1, a2 = coefs[j]
        seg = x[j * block:(j + 1) * block]
        out[j * block:j * block + seg.size], zi = lfilter(
            [b0, b1, b2], [1.0, a1, a2], seg, zi=zi)
    return out


def resonator_bank(x, coefs, alpha, hop, n_frames):
    x = np.ascontiguousarray(x, dtype=np.float64)
    coefs = np.asarray(coefs, dtype=np.float64)
    if n_frames * hop > x.shape[0]:
        raise ValueError("signal too short for requested frames")
    x = x[:n_frames * hop]
    out = np.zeros((coefs.shape[0], n_frames))
    for c, (b0, a1, a2) in enumerate(coefs):
        y = lfilter([b0, 0.0, -b0], [1.0, a1, a2], x)
        e = lfilter([1.0 - alpha], [1.0, -alpha], np.maximum(y, 0.0))
        out[c] = e[hop - 1::hop]
    return out


def frame_autocorr(x, starts, win, lag_min, lag_max, chunk=32):
    x = np.ascontiguousarray(x, dtype=np.float64)
    starts = np.asarray(starts, dtype=np.int64)
    if starts.size and (starts.min() < 0 or starts.max() + win + lag_max > x.size):
        raise ValueError("frame out of range")
    lags = np.arange(lag_min, lag_max + 1)
    view = sliding_window_view(x, win)
    energy = np.einsum("ij,ij->i", view, view)
    out = np.zeros((starts.size, lags.size))
    for c in range(0, starts.size, chunk):
        s = starts[c:c + chunk]
        a = view[s]
        b = view[s[:, None] + lags[None, :]]
        num = np.einsum("fw,flw->fl", a, b)
        den = np.sqrt(energy[s][:, None] * energy[s[:, None] + lags[None, :]])
        out[c:c + chunk] = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return out

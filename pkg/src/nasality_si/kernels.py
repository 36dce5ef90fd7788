"""Backend selection for the recursive-filter kernels.

The compiled Cython module is used when it imports; otherwise (or when the
environment variable ``NASALITY_SI_PURE`` is set to a non-empty value other
than ``0``) the numpy/scipy fallback is used.  ``BACKEND`` names the choice.
"""
import os

from . import _fallback

_force_pure = os.environ.get("NASALITY_SI_PURE", "") not in ("", "0")

try:
    if _force_pure:
        raise ImportError("pure backend forced")
    from . import _kernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _fallback
    BACKEND = "python"

onepole = _impl.onepole
biquad_blocks = _impl.biquad_blocks
resonator_bank = _impl.resonator_bank
frame_autocorr = _impl.frame_autocorr

__all__ = ["BACKEND", "onepole", "biquad_blocks", "resonator_bank", "frame_autocorr"]

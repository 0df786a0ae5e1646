"""Kernel backend selection.

The compiled Cython core is preferred when importable; the pure
numpy/python twin is the fallback. Set SPECTUBE_PURE=1 to force the pure
backend (used by the parity tests and the benchmark).
"""

import os

from . import _impl

if os.environ.get("SPECTUBE_PURE") == "1":
    _backend = _impl
else:
    try:
        from . import _core as _backend
    except ImportError:
        _backend = _impl

extract_iso_segments = _backend.extract_iso_segments
trace_streamline = _backend.trace_streamline
KERNEL_KIND = _backend.KERNEL_KIND


def available_backends():
    """All importable kernel backends, keyed by kind."""
    backends = {_impl.KERNEL_KIND: _impl}
    try:
        from . import _core
        backends[_core.KERNEL_KIND] = _core
    except ImportError:
        pass
    return backends

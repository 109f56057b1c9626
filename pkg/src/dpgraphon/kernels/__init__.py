"""Kernel backend selection: compiled extension if built, else the
pure-Python reference.  Set DPGRAPHON_PURE_PYTHON=1 to force the
fallback (used by the parity tests and the benchmark)."""

import os

if os.environ.get("DPGRAPHON_PURE_PYTHON"):
    from . import _fallback as _backend

    BACKEND = "python"
else:
    try:
        from . import _core as _backend  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from . import _fallback as _backend

        BACKEND = "python"

transport_value = _backend.transport_value
transport_batch = _backend.transport_batch
fw_birkhoff = _backend.fw_birkhoff

__all__ = ["transport_value", "transport_batch", "fw_birkhoff", "BACKEND"]

"""Hot kernels with a compiled core and a numpy fallback.

The Cython extension is used when it was built and ``FIXRES_PURE_PYTHON`` is
not set; otherwise the numpy implementations are loaded. ``BACKEND`` names the
active implementation.
"""

import logging
import os

from . import _fallback

logger = logging.getLogger(__name__)

if os.environ.get("FIXRES_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _native as _impl

        BACKEND = "native"
    except ImportError:
        logger.info("compiled kernels unavailable, using numpy fallback")
        _impl = _fallback
        BACKEND = "python"

im2col = _impl.im2col
col2im = _impl.col2im
resize_bilinear_u8 = _impl.resize_bilinear_u8

__all__ = ["BACKEND", "im2col", "col2im", "resize_bilinear_u8"]

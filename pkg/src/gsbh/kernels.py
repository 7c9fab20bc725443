"""Kernel backend selection.

The compiled extension is used when it imports; set ``GSBH_PURE_PYTHON=1`` to
force the numpy fallback.
"""
from __future__ import annotations

import os

from gsbh import _pykernels

if os.environ.get("GSBH_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from gsbh import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND: str = _impl.BACKEND
splitmix64 = _impl.splitmix64
im2col = _impl.im2col
col2im = _impl.col2im
world_step = _impl.world_step
render_view = _impl.render_view
adamw_update = _impl.adamw_update

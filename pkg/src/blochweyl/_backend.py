"""Kernel backend selection: compiled extension if available, numpy otherwise.

Set BLOCHWEYL_FORCE_PYTHON=1 to skip the extension (used by the benchmark and
the backend-agreement tests).
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("BLOCHWEYL_FORCE_PYTHON", "") == "1":
    kernels = _kernels_py
else:
    try:
        from . import _kernels as kernels  # type: ignore
    except ImportError:
        kernels = _kernels_py

BACKEND = kernels.BACKEND
magnus_rotation_step = kernels.magnus_rotation_step
rotate_bloch = kernels.rotate_bloch

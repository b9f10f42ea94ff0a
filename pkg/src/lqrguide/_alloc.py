"""Keep large numpy temporaries in the heap instead of fresh mmaps.

Every learning step allocates and frees a few hundred kB blocks; with the
default glibc thresholds each one is a new mapping and page-faults on
first touch, costing roughly a third of the step time.
"""
from __future__ import annotations

import ctypes
import ctypes.util
import sys

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_done = False


def keep_heap_blocks(limit: int = 1 << 28) -> bool:
    global _done
    if _done or not sys.platform.startswith("linux"):
        return _done
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        ok = libc.mallopt(_M_MMAP_THRESHOLD, limit) == 1
        ok = libc.mallopt(_M_TRIM_THRESHOLD, limit) == 1 and ok
    except (OSError, AttributeError):
        return False
    _done = ok
    return ok
